// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csdn/checkpoint.hpp"
#include "csdn/cli.hpp"
#include "csdn/evaluation.hpp"
#include "csdn/fusion.hpp"
#include "csdn/losses.hpp"
#include "retrieval_oracle.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
namespace L = csdn::losses;
using csdn::Matrix;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

std::vector<int> paired_labels(int n, int classes, std::mt19937_64& rng) {
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = (i / 2) % classes;
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

// Criterion 1.
Verdict gradient_suite() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(2, 8), rows(4, 8);
  double worst = 0;
  int checks = 0;
  auto track = [&](const Matrix& analytic, const std::function<double()>& f, Matrix& x, double h = 1e-6) {
    worst = std::max(worst, testing::relative_error(analytic, testing::numeric_gradient(f, x, h)));
    ++checks;
  };
  for (int trial = 0; trial < 25; ++trial) {
    const int d = dim(rng), n = rows(rng) / 2 * 2, classes = 2 + trial % 3;
    const int nc = std::min(classes, n / 2);
    auto y = paired_labels(n, nc, rng);
    Matrix feat = testing::random_matrix(n, d, rng);
    Matrix logits = testing::random_matrix(n, nc + 1, rng);
    Matrix bank = testing::random_matrix(nc, d, rng);
    Matrix bank_r = testing::random_matrix(nc, d, rng);
    Matrix text(n, d);
    for (int i = 0; i < n; ++i) text.row(i) = bank.row(y[i]);

    const auto id = L::identity_loss(logits, y);
    track(id.d_input, [&] { return L::identity_loss(logits, y).loss.value; }, logits);

    const auto wrt = L::weighted_regularized_triplet(feat, y);
    track(wrt.d_input, [&] { return L::weighted_regularized_triplet(feat, y).loss.value; }, feat);

    const auto i2t = L::image_to_text_contrastive(feat, text);
    auto fi2t = [&] { return L::image_to_text_contrastive(feat, text).loss.value; };
    track(i2t.d_image, fi2t, feat);
    track(i2t.d_text, fi2t, text);

    const auto t2i = L::text_to_image_contrastive(feat, y, text);
    auto ft2i = [&] { return L::text_to_image_contrastive(feat, y, text).loss.value; };
    track(t2i.d_image, ft2i, feat);
    track(t2i.d_text, ft2i, text);

    const auto ce = L::image_to_text_ce(feat, y, bank);
    auto fce = [&] { return L::image_to_text_ce(feat, y, bank).loss.value; };
    track(ce.d_image, fce, feat);
    track(ce.d_text, fce, bank);

    std::vector<csdn::Modality> m;
    for (int i = 0; i < n; ++i) m.push_back(i % 2 ? csdn::Modality::kInfrared : csdn::Modality::kVisible);
    const L::LossWeights w;
    const auto total = L::stage3_total(feat, logits, y, m, bank, bank_r, w);
    auto ftot = [&] { return L::stage3_total(feat, logits, y, m, bank, bank_r, w).loss.value; };
    track(total.d_features, ftot, feat);
    track(total.d_logits, ftot, logits);

    auto p = csdn::FusionParams::create(d, rng);
    for (auto& np : p.parameters()) np.param->value = testing::random_matrix(d, d, rng, 0.5);
    Matrix q = testing::random_matrix(nc + 1, d, rng), kv = testing::random_matrix(nc + 1, d, rng);
    const Matrix probe = testing::random_matrix(nc + 1, d, rng);
    auto ffuse = [&] { return (csdn::attention_fuse(p, q, kv).array() * probe.array()).sum(); };
    csdn::FusionCache cache;
    csdn::attention_fuse(p, q, kv, &cache);
    for (auto& np : p.parameters()) np.param->zero_grad();
    const auto g = csdn::attention_fuse_backward(p, cache, probe);
    for (auto& np : p.parameters()) track(np.param->grad, ffuse, np.param->value, 1e-4);
    track(g.d_query, ffuse, q, 1e-4);
    track(g.d_key_value, ffuse, kv, 1e-4);
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-4 && secs <= 120.0, std::to_string(checks) + " gradient checks, worst rel. err " +
                                              fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + " s"};
}

// Criterion 2.
Verdict closed_forms() {
  std::vector<std::string> failed;
  auto expect = [&](const std::string& name, double got, double want, double tol) {
    if (!(std::abs(got - want) <= tol)) failed.push_back(name + "=" + fmt("%.10g", got));
  };
  for (int nc : {2, 4, 16}) {
    std::vector<int> y{0, nc - 1};
    expect("id_uniform_" + std::to_string(nc), L::identity_loss(Matrix::Constant(2, nc, 0.3), y).loss.value,
           std::log(nc), 1e-9);
  }
  Matrix tet(4, 3);
  const double h = 1.0 / (2.0 * std::sqrt(2.0));
  tet << h, h, h, h, -h, -h, -h, h, -h, -h, -h, h;
  expect("wrt_symmetric", L::weighted_regularized_triplet(tet, std::vector<int>{0, 0, 1, 1}).loss.value,
         std::log(2.0), 1e-9);
  const std::vector<double> one{1.0}, zero{0.0}, two{2.0}, negs{1.0, 3.0};
  expect("wrt_anchor_equal", L::weighted_triplet_anchor_term(one, one), std::log(2.0), 1e-9);
  expect("wrt_anchor_0_2", L::weighted_triplet_anchor_term(zero, two), 0.1269, 5e-5);
  expect("wrt_anchor_two_negatives", L::weighted_triplet_anchor_term(one, negs), 0.5810, 5e-5);
  const Matrix eye = Matrix::Identity(2, 2);
  expect("i2t_orthogonal", L::image_to_text_contrastive(eye, eye).loss.value, 0.3133, 5e-5);
  Matrix img(1, 4);
  img << 1, 0, 0, 0;
  expect("ce_onehot", L::image_to_text_ce(img, std::vector<int>{0}, Matrix::Identity(4, 4)).loss.value, 0.7437, 5e-5);
  expect("stage3_combination", L::combine_stage3({1.0, 2.0, 3.0, 4.0}, L::LossWeights{}).value, 1.85, 1e-12);
  expect("similarity_orthogonal", L::similarity(csdn::RowVector::Unit(2, 0), csdn::RowVector::Unit(2, 1)).value, 0.0,
         0.0);

  std::mt19937_64 rng(3);
  auto p = csdn::FusionParams::create(6, rng);
  const Matrix f_tv = testing::random_matrix(5, 6, rng), f_tr = testing::random_matrix(5, 6, rng);
  const Matrix fused = csdn::fuse_text_banks(p, f_tv, f_tr, csdn::FusionDirection::kVisibleQuery);
  if (!(fused.array() == f_tv.array()).all()) failed.push_back("zero_wc_fusion_not_bitwise");

  // Retrieval examples: one query, hits at ranks 1 and 3 of 3 gives AP (1 + 2/3) / 2.
  csdn::eval::Ranking order(1, 3);
  order << 0, 1, 2;
  const std::vector<int> qid{7}, gid{7, 1, 7};
  csdn::eval::ValidityMask valid = csdn::eval::ValidityMask::Constant(1, 3, true);
  expect("ap_example", csdn::eval::mean_average_precision(order, qid, gid, valid).map, 5.0 / 6.0, 1e-12);

  std::string detail = "13 closed-form values";
  if (!failed.empty()) {
    detail = "mismatch:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

// Criterion 4.
Verdict metric_oracle() {
  std::mt19937_64 rng(99);
  double worst = 0;
  long ties = 0, excluded = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto x = testing::random_instance(rng);
    const auto ranking = csdn::eval::rank_gallery(x.query, x.gallery);
    for (bool camera_rule : {true, false}) {
      const auto valid = camera_rule ? csdn::eval::camera_exclusion_mask(x.qid, x.qcam, x.gid, x.gcam)
                                     : csdn::eval::ValidityMask::Constant(x.query.rows(), x.gallery.rows(), true);
      if (camera_rule) excluded += (!valid).count();
      const auto cmc = csdn::eval::cmc_curve(ranking, x.qid, x.gid, valid, 20);
      const auto map = csdn::eval::mean_average_precision(ranking, x.qid, x.gid, valid);
      const auto ref = testing::oracle_metrics(x, camera_rule, 20);
      for (int r = 0; r < 20; ++r) worst = std::max(worst, std::abs(cmc.cmc[r] - ref.cmc[r]));
      worst = std::max(worst, std::abs(map.map - ref.map));
      if (cmc.dropped_queries != ref.dropped) worst = 1;
    }
    // Exact duplicate gallery rows guarantee similarity ties for every query.
    std::set<std::vector<double>> seen;
    for (int j = 0; j < x.gallery.rows(); ++j)
      if (!seen.insert({x.gallery.row(j).data(), x.gallery.row(j).data() + x.gallery.cols()}).second) ++ties;
  }
  return {worst <= 1e-9 && ties > 0 && excluded > 0, "100 instances, max deviation " + fmt("%.1e", worst) + ", " +
                                                         std::to_string(ties) + " duplicated gallery rows, " +
                                                         std::to_string(excluded) + " camera exclusions"};
}

// Criterion 8.
Verdict schedule_values() {
  const auto c = csdn::parse_config("profile: full\n");
  const auto& s3 = c.train.hse.schedule;
  const bool ok = csdn::train::lr_at(s3, 0) == 3e-6 && csdn::train::lr_at(s3, 10) == 3e-4 &&
                  csdn::train::lr_at(s3, 40) == 3e-5 && csdn::train::lr_at(s3, 70) == 3e-6 &&
                  csdn::train::lr_at(c.train.mspl.schedule, 0) == 3e-4 &&
                  csdn::train::lr_at(c.train.sii.schedule, 0) == 3e-4;
  return {ok, "stage 3 lr(0,10,40,70) = " + fmt("%g", csdn::train::lr_at(s3, 0)) + ", " +
                  fmt("%g", csdn::train::lr_at(s3, 10)) + ", " + fmt("%g", csdn::train::lr_at(s3, 40)) + ", " +
                  fmt("%g", csdn::train::lr_at(s3, 70)) + "; cosine lr(0) = " +
                  fmt("%g", csdn::train::lr_at(c.train.mspl.schedule, 0))};
}

struct DeskRun {
  csdn::cli::LabelledReports reports;
  double seconds = 0;
  fs::path dir;
};

DeskRun desk_run(const fs::path& dir, const std::string& mode, std::ostream& log) {
  auto c = csdn::parse_config("");
  c.output_dir = dir;
  c.train.mode = csdn::parse_ablation_mode(mode);
  log << "== " << mode << " -> " << dir.string() << "\n";
  const auto start = Clock::now();
  fs::remove_all(dir);
  csdn::cli::cmd_generate_data(c, false, log);
  csdn::cli::cmd_train(c, {}, log);
  DeskRun run;
  run.reports = csdn::cli::cmd_evaluate(c, {{}, true}, log);
  run.seconds = seconds_since(start);
  run.dir = dir;
  return run;
}

const csdn::eval::RetrievalReport& all_single(const DeskRun& r) {
  for (const auto& [label, rep] : r.reports)
    if (rep.protocol.name() == "all-single-ir2vis") return rep;
  throw std::runtime_error("all-search single-shot report missing");
}

// Criterion 3.
Verdict freezing(const fs::path& dir, std::ostream& log) {
  auto c = csdn::parse_config(R"(train:
  mspl: {epochs: 3}
  sii: {epochs: 3}
  hse: {epochs: 3, decay_epochs: [2]}
  iterations_per_epoch: 20
)");
  c.output_dir = dir;
  fs::remove_all(dir);
  csdn::cli::cmd_generate_data(c, false, log);
  const auto result = csdn::cli::cmd_train(c, {}, log);

  // Recompute from the stage checkpoints, independently of the written ledger.
  const csdn::cli::Layout layout{dir};
  const auto manifest = csdn::data::load_manifest(layout.train_manifest());
  auto initial = csdn::Model::create(c.model_config(manifest.image_shape, manifest.num_identities));
  auto hashes = [](csdn::Model& m) {
    std::map<std::string, std::uint64_t> h;
    for (const auto& g : m.present_groups()) h[g] = csdn::hash_group(m, g);
    return h;
  };
  auto previous = hashes(initial);
  bool ok = result.ledger.at("matches").get<bool>() && previous.size() == 7;
  std::string detail;
  for (auto stage : c.train.stages()) {
    auto ck = csdn::load_checkpoint(layout.stage_checkpoint(stage));
    const auto now = hashes(ck.model);
    std::set<std::string> changed;
    for (const auto& [g, h] : previous)
      if (now.at(g) != h) changed.insert(g);
    const bool stage_ok = changed == csdn::train::trainable_groups(stage);
    ok = ok && stage_ok;
    detail += std::string(detail.empty() ? "" : "; ") + std::string(csdn::train::to_string(stage)) + " changed {";
    for (const auto& g : changed) detail += (g == *changed.begin() ? "" : ",") + g;
    detail += "}";
    previous = now;
  }
  return {ok, detail};
}

// Criterion 7.
Verdict determinism(const DeskRun& a, const DeskRun& b) {
  const auto la = read_jsonl(a.dir / "metrics.jsonl");
  const auto lb = read_jsonl(b.dir / "metrics.jsonl");
  double loss_dev = la.size() == lb.size() && !la.empty() ? 0.0 : 1.0;
  for (std::size_t i = 0; i < std::min(la.size(), lb.size()); ++i) {
    loss_dev = std::max(loss_dev, std::abs(la[i]["loss"].get<double>() - lb[i]["loss"].get<double>()));
    for (const auto& [k, v] : la[i]["components"].items())
      loss_dev = std::max(loss_dev, std::abs(v.get<double>() - lb[i]["components"][k].get<double>()));
  }
  double report_dev = a.reports.size() == b.reports.size() ? 0.0 : 1.0;
  for (std::size_t i = 0; i < std::min(a.reports.size(), b.reports.size()); ++i) {
    const auto& ra = a.reports[i].second;
    const auto& rb = b.reports[i].second;
    report_dev = std::max(report_dev, std::abs(ra.map - rb.map));
    for (std::size_t r = 0; r < ra.cmc.size(); ++r) report_dev = std::max(report_dev, std::abs(ra.cmc[r] - rb.cmc[r]));
  }
  return {loss_dev <= 1e-7 && report_dev <= 1e-7, std::to_string(la.size()) + " epoch records, max loss deviation " +
                                                      fmt("%.1e", loss_dev) + ", max report deviation " +
                                                      fmt("%.1e", report_dev)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(root);
  std::ofstream log(root / "acceptance.log");
  std::vector<Verdict> v(9);

  auto guarded = [&](int k, const std::function<Verdict()>& f) {
    try {
      v[k] = f();
    } catch (const std::exception& e) {
      v[k] = {false, std::string("exception: ") + e.what()};
    }
    log.flush();
  };

  guarded(1, gradient_suite);
  guarded(2, closed_forms);
  guarded(4, metric_oracle);
  guarded(8, schedule_values);
  guarded(3, [&] { return freezing(root / "freeze", log); });

  DeskRun full, repeat;
  guarded(5, [&] {
    full = desk_run(root / "csdn_full", "csdn_full", log);
    const auto& r = all_single(full);
    return Verdict{r.rank(1) >= 0.90 && r.map >= 0.80 && full.seconds <= 600.0,
                   "all-search single-shot Rank-1 " + fmt("%.1f", 100 * r.rank(1)) + "%, mAP " +
                       fmt("%.1f", 100 * r.map) + "%, " + fmt("%.0f", full.seconds) + " s"};
  });
  guarded(7, [&] {
    repeat = desk_run(root / "csdn_full_repeat", "csdn_full", log);
    return determinism(full, repeat);
  });
  guarded(6, [&] {
    csdn::cli::LabelledReports rows;
    std::map<std::string, double> map;
    for (const std::string mode : {"baseline", "clip_pretrained", "clip_vireid", "csdn_full"}) {
      const auto run = mode == "csdn_full" ? full : desk_run(root / mode, mode, log);
      for (const auto& row : run.reports) rows.push_back(row);
      map[mode] = all_single(run).map;
    }
    csdn::cli::write_comparison(root / "reports", "ablation", rows, root / "plots/ablation_cmc.svg");
    std::string detail = "all-search single-shot mAP:";
    for (const std::string mode : {"baseline", "clip_pretrained", "clip_vireid", "csdn_full"})
      detail += " " + mode + " " + fmt("%.1f", 100 * map[mode]);
    detail += "; report " + (root / "reports/ablation.tsv").string();
    return Verdict{map.at("csdn_full") >= map.at("baseline"), detail};
  });

  const char* names[] = {"",
                         "gradient suite",
                         "closed-form values",
                         "freezing ledger",
                         "metric oracle equivalence",
                         "end-to-end desk run",
                         "ablation trend",
                         "determinism",
                         "learning-rate schedule"};
  bool all = true;
  for (int k = 1; k <= 8; ++k) {
    std::cout << (v[k].pass ? "PASS" : "FAIL") << " criterion " << k << " (" << names[k] << "): " << v[k].detail
              << "\n";
    all = all && v[k].pass;
  }
  return all ? 0 : 1;
}
