#include "csdn/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "csdn/checkpoint.hpp"
#include "csdn/errors.hpp"
#include "csdn/report.hpp"

namespace csdn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path Layout::stage_checkpoint(train::Stage s) const {
  return checkpoints() / (std::string(train::to_string(s)) + ".ckpt");
}

namespace {

data::DatasetManifest load_split(const RunConfig& c, data::Split split) {
  const Layout layout{c.output_dir};
  const bool synthetic = c.dataset.source == DatasetSection::Source::kSynthetic;
  const bool is_train = split == data::Split::kTrain;
  const fs::path path = synthetic ? (is_train ? layout.train_manifest() : layout.test_manifest())
                                  : (is_train ? c.dataset.train_manifest : c.dataset.test_manifest);
  if (!fs::exists(path)) {
    throw DataError(std::string(data::to_string(split)) + " manifest not found: " + path.string() +
                    (synthetic ? " (run generate-data first)" : ""));
  }
  return data::load_manifest(path);
}

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::map<std::string, std::uint64_t> group_hashes(Model& m) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& g : m.present_groups()) out[g] = hash_group(m, g);
  return out;
}

json hashes_json(const std::map<std::string, std::uint64_t>& h) {
  json j = json::object();
  for (const auto& [g, v] : h) j[g] = hex(v);
  return j;
}

std::map<std::string, std::uint64_t> hashes_from_json(const json& j) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [g, v] : j.items()) out[g] = std::stoull(v.get<std::string>(), nullptr, 16);
  return out;
}

json ledger_entry(train::Stage stage, const std::map<std::string, std::uint64_t>& before,
                  const std::map<std::string, std::uint64_t>& after) {
  const auto trainable = train::trainable_groups(stage);
  std::vector<std::string> changed, frozen;
  bool frozen_intact = true;
  for (const auto& [g, h] : before) {
    const bool moved = after.at(g) != h;
    if (moved) changed.push_back(g);
    if (!trainable.count(g)) {
      frozen.push_back(g);
      frozen_intact = frozen_intact && !moved;
    }
  }
  // Groups the mode does not instantiate cannot change.
  std::vector<std::string> expected;
  for (const auto& g : trainable)
    if (before.count(g)) expected.push_back(g);
  return {{"stage", std::string(train::to_string(stage))},
          {"trainable", expected},
          {"changed", changed},
          {"frozen", frozen},
          {"frozen_intact", frozen_intact},
          {"matches", changed == expected && frozen_intact},
          {"hashes_before", hashes_json(before)},
          {"hashes_after", hashes_json(after)}};
}

bool ledger_has(const json& ledger, train::Stage stage) {
  for (const auto& e : ledger)
    if (e.at("stage") == train::to_string(stage)) return true;
  return false;
}

std::string fmt_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// Stage 3 from `model`/`state` onwards for the sweep; no files are written.
void finish_training(const RunConfig& c, Model& model, train::RunState& state, const data::DatasetManifest& train_set,
                     std::ostream& log) {
  for (auto stage : c.train.stages()) {
    if (state.completed(stage)) continue;
    state = train::run_stage(c.train.stage(stage), c.train, model, train_set, state,
                             [&](const train::RunState&, const train::EpochRecord& r) {
                               log << "  " << train::to_string(r.stage) << " epoch " << r.epoch << " loss " << r.loss
                                   << "\n";
                               return true;
                             });
  }
}

LabelledReports evaluate_protocols(const RunConfig& c, const Model& model, const data::DatasetManifest& test_set,
                                   const std::string& label) {
  LabelledReports rows;
  for (const auto& p : c.eval.protocols) {
    const auto protocol = data::parse_protocol(p);
    rows.emplace_back(label, eval::evaluate(model.visual, test_set, protocol, c.eval.trials));
  }
  return rows;
}

}  // namespace

GenerateResult cmd_generate_data(const RunConfig& c, bool force, std::ostream& log) {
  if (c.dataset.source != DatasetSection::Source::kSynthetic)
    throw ConfigError("config key " + c.where("dataset.source") + ": generate-data needs a synthetic dataset");
  const Layout layout{c.output_dir};
  if (!force && (fs::exists(layout.train_manifest()) || fs::exists(layout.test_manifest())))
    throw ConfigError("dataset already exists under " + layout.data().string() + " (pass --force to overwrite)");
  fs::create_directories(layout.data());

  auto spec = c.dataset.synthetic;
  spec.split = data::Split::kTrain;
  const auto train_set = data::generate_synthetic(spec);
  spec.split = data::Split::kTest;
  const auto test_set = data::generate_synthetic(spec);
  data::save_manifest(train_set, layout.train_manifest());
  data::save_manifest(test_set, layout.test_manifest());

  log << "generate-data: train " << train_set.records.size() << " records, test " << test_set.records.size()
      << " records, " << spec.num_identities << " identities -> " << layout.data().string() << "\n";
  return {train_set.records.size(), test_set.records.size()};
}

TrainResult cmd_train(const RunConfig& c, const TrainOptions& options, std::ostream& log) {
  const Layout layout{c.output_dir};
  const auto train_set = load_split(c, data::Split::kTrain);
  const auto model_config = c.model_config(train_set.image_shape, train_set.num_identities);
  const std::string resolved = emit_config(c);

  Model model = Model::create(model_config);
  train::RunState state = train::initial_run_state(c.train.seed);
  json ledger = json::array();
  std::map<std::string, std::uint64_t> stage_start;
  std::size_t epochs_logged = 0;

  if (options.resume) {
    if (!fs::exists(layout.resume_checkpoint()))
      throw CheckpointError("nothing to resume: " + layout.resume_checkpoint().string() + " does not exist");
    auto ck = load_checkpoint(layout.resume_checkpoint());
    if (json(ck.model.config) != json(model_config))
      throw CheckpointError("resume checkpoint was written for a different model configuration");
    if (ck.metadata.value("config", "") != resolved)
      throw CheckpointError("config differs from the interrupted run");
    model = std::move(ck.model);
    state = std::move(ck.state);
    ledger = ck.metadata.at("ledger");
    stage_start = hashes_from_json(ck.metadata.at("stage_start_hashes"));
    epochs_logged = ck.metadata.at("epochs_logged").get<std::size_t>();
    // Drop log lines written after the checkpoint.
    std::vector<std::string> lines;
    std::ifstream in(layout.metrics());
    for (std::string line; lines.size() < epochs_logged && std::getline(in, line);) lines.push_back(line);
    if (lines.size() != epochs_logged) throw CheckpointError("metrics log is shorter than the resume checkpoint");
    std::string kept;
    for (const auto& l : lines) kept += l + "\n";
    report::write_file(layout.metrics(), kept);
    log << "train: resuming " << train::to_string(state.stage) << " at epoch " << state.next_epoch << "\n";
  } else {
    const bool occupied = fs::exists(layout.resume_checkpoint()) || fs::exists(layout.metrics()) ||
                          (fs::exists(layout.checkpoints()) && !fs::is_empty(layout.checkpoints()));
    if (occupied && !options.force)
      throw ConfigError("training output already exists under " + layout.root.string() +
                        " (pass --force to overwrite or --resume to continue)");
    fs::remove_all(layout.checkpoints());
    fs::remove(layout.resume_checkpoint());
    fs::remove(layout.metrics());
    fs::remove(layout.freeze_ledger());
    if (c.train.mode == AblationMode::kClipPretrained && !c.model.pretrained_checkpoint.empty()) {
      load_checkpoint_into(c.model.pretrained_checkpoint, model, {"stems", "trunk"});
      log << "train: initialized stems and trunk from " << c.model.pretrained_checkpoint.string() << "\n";
    }
    report::write_file(layout.metrics(), "");
  }
  fs::create_directories(layout.checkpoints());
  report::write_file(layout.resolved_config(), resolved);

  auto metadata = [&] {
    return json{{"config", resolved},
                {"mode", std::string(to_string(c.train.mode))},
                {"ledger", ledger},
                {"stage_start_hashes", hashes_json(stage_start)},
                {"epochs_logged", epochs_logged}};
  };

  TrainResult result;
  std::ofstream metrics(layout.metrics(), std::ios::app);
  for (auto stage : c.train.stages()) {
    const bool mid_stage = state.stage == stage && !state.stage_finished && state.next_epoch > 0;
    if (!state.completed(stage)) {
      if (!mid_stage) stage_start = group_hashes(model);
      log << "train: stage " << train::to_string(stage) << "\n";
      const auto start = std::chrono::steady_clock::now();
      state = train::run_stage(c.train.stage(stage), c.train, model, train_set, state,
                               [&](const train::RunState& s, const train::EpochRecord& r) {
                                 metrics << report::to_json(r).dump() << "\n";
                                 metrics.flush();
                                 result.epochs.push_back(r);
                                 ++epochs_logged;
                                 log << "  epoch " << r.epoch << " lr " << r.lr << " loss " << r.loss << "\n";
                                 save_checkpoint(layout.resume_checkpoint(), model, s, metadata());
                                 return options.halt_after < 0 ||
                                        epochs_logged < static_cast<std::size_t>(options.halt_after);
                               });
      log << "  " << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";
    }
    if (state.completed(stage) && !ledger_has(ledger, stage)) {
      ledger.push_back(ledger_entry(stage, stage_start, group_hashes(model)));
      save_checkpoint(layout.stage_checkpoint(stage), model, state, metadata());
      save_checkpoint(layout.resume_checkpoint(), model, state, metadata());
    }
    if (!state.completed(stage)) {
      result.halted = true;
      break;
    }
  }

  bool all_match = true;
  for (const auto& e : ledger) all_match = all_match && e.at("matches").get<bool>();
  result.ledger = json{{"mode", std::string(to_string(c.train.mode))},
                       {"stages", ledger},
                       {"complete", !result.halted},
                       {"matches", all_match}};
  report::write_file(layout.freeze_ledger(), result.ledger.dump(2) + "\n");
  if (result.halted) {
    log << "train: halted after " << epochs_logged << " epochs; continue with --resume\n";
  } else {
    result.final_checkpoint = layout.stage_checkpoint(train::Stage::kHse);
    log << "train: done, checkpoint " << result.final_checkpoint.string() << "\n";
  }
  return result;
}

LabelledReports cmd_evaluate(const RunConfig& c, const EvaluateOptions& options, std::ostream& log) {
  const Layout layout{c.output_dir};
  const fs::path ckpt = options.checkpoint.empty() ? layout.stage_checkpoint(train::Stage::kHse) : options.checkpoint;
  auto ck = load_checkpoint(ckpt);
  const auto test_set = load_split(c, data::Split::kTest);
  if (test_set.image_shape != ck.model.config.encoder.image_shape)
    throw DataError("test images are " + std::to_string(test_set.image_shape.height) + "x" +
                    std::to_string(test_set.image_shape.width) + "x" + std::to_string(test_set.image_shape.channels) +
                    " but the checkpoint encoder expects another shape");
  const std::string label = ck.metadata.value("mode", std::string(to_string(c.train.mode)));
  const auto rows = evaluate_protocols(c, ck.model, test_set, label);
  write_comparison(layout.reports(), "evaluation", rows, options.plots ? layout.plots() / "cmc.svg" : fs::path{});
  for (const auto& [l, r] : rows) log << eval::flat_row(l, r) << "\n";
  return rows;
}

void write_comparison(const fs::path& reports_dir, const std::string& name, const LabelledReports& rows,
                      const fs::path& plot_path) {
  json j = json::array();
  for (const auto& [label, r] : rows) j.push_back({{"label", label}, {"report", r}});
  report::write_file(reports_dir / (name + ".json"), j.dump(2) + "\n");
  report::write_file(reports_dir / (name + ".tsv"), report::flat_table(rows));
  if (!plot_path.empty()) {
    LabelledReports curves;
    for (const auto& [label, r] : rows) curves.emplace_back(label + " " + r.protocol.name(), r);
    report::write_file(plot_path, report::cmc_svg("CMC", curves));
  }
}

SweepSpec parse_sweep(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError("sweep must look like lambda1=0,0.05,...,0.3");
  SweepSpec spec;
  spec.parameter = std::string(text.substr(0, eq));
  if (spec.parameter != "lambda1" && spec.parameter != "lambda2" && spec.parameter != "lambda3")
    throw ConfigError("sweep parameter must be lambda1, lambda2 or lambda3, got '" + spec.parameter + "'");
  std::vector<std::string> tokens;
  std::stringstream ss{std::string(text.substr(eq + 1))};
  for (std::string t; std::getline(ss, t, ',');) tokens.push_back(t);
  auto number = [&](const std::string& t) {
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + t + "' is not a number");
    }
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] != "...") {
      spec.values.push_back(number(tokens[i]));
      continue;
    }
    if (spec.values.size() < 2 || i + 1 >= tokens.size())
      throw ConfigError("sweep ellipsis needs two values before it and one after");
    const double step = spec.values.back() - spec.values[spec.values.size() - 2];
    const double last = number(tokens[++i]);
    if (!(step > 0) || last < spec.values.back()) throw ConfigError("sweep ellipsis needs an increasing range");
    const double first = spec.values.back();
    const int count = static_cast<int>(std::floor((last - first) / step + 1e-9));
    // Round to the step's scale so 0.05 * 3 prints as 0.15.
    for (int k = 1; k <= count; ++k) spec.values.push_back(std::round((first + k * step) * 1e12) / 1e12);
    if (std::abs(spec.values.back() - last) > 1e-9) spec.values.push_back(last);
  }
  if (spec.values.empty()) throw ConfigError("sweep lists no values");
  for (double v : spec.values)
    if (v < 0) throw ConfigError("sweep values must be non-negative");
  return spec;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& c, const SweepSpec& spec, bool plots, bool force, std::ostream& log) {
  const Layout layout{c.output_dir};
  const fs::path table = layout.sweep() / (spec.parameter + ".tsv");
  if (fs::exists(table) && !force)
    throw ConfigError("sweep output " + table.string() + " already exists (pass --force to overwrite)");
  const auto train_set = load_split(c, data::Split::kTrain);
  const auto test_set = load_split(c, data::Split::kTest);

  // Stages before hse do not depend on the loss weights, so they run once.
  Model base = Model::create(c.model_config(train_set.image_shape, train_set.num_identities));
  train::RunState base_state = train::initial_run_state(c.train.seed);
  for (auto stage : c.train.stages()) {
    if (stage == train::Stage::kHse) break;
    log << "sweep: shared stage " << train::to_string(stage) << "\n";
    base_state = train::run_stage(c.train.stage(stage), c.train, base, train_set, base_state);
  }

  std::vector<SweepRow> rows;
  for (double v : spec.values) {
    RunConfig at = c;
    set_config_value(at, "train." + spec.parameter, fmt_value(v));
    log << "sweep: " << spec.parameter << " = " << fmt_value(v) << "\n";
    Model model = base;
    train::RunState state = base_state;
    finish_training(at, model, state, train_set, log);
    rows.push_back({v, evaluate_protocols(at, model, test_set, spec.parameter + "=" + fmt_value(v))});
  }

  json j{{"parameter", spec.parameter}, {"mode", std::string(to_string(c.train.mode))}, {"rows", json::array()}};
  LabelledReports flat;
  for (const auto& row : rows) {
    json reports = json::array();
    for (const auto& [label, r] : row.reports) {
      reports.push_back(r);
      flat.emplace_back(label, r);
    }
    j["rows"].push_back({{"value", row.value}, {"reports", reports}});
  }
  report::write_file(layout.sweep() / (spec.parameter + ".json"), j.dump(2) + "\n");
  report::write_file(table, report::flat_table(flat));
  for (const auto& [label, r] : flat) log << eval::flat_row(label, r) << "\n";

  if (plots) {
    for (std::size_t p = 0; p < c.eval.protocols.size(); ++p) {
      std::vector<std::string> categories;
      report::Series r1{"Rank-1", {}}, map{"mAP", {}};
      for (const auto& row : rows) {
        categories.push_back(fmt_value(row.value));
        r1.values.push_back(row.reports[p].second.rank(1));
        map.values.push_back(row.reports[p].second.map);
      }
      const auto name = rows.front().reports[p].second.protocol.name();
      report::write_file(layout.plots() / ("sweep_" + spec.parameter + "_" + name + ".svg"),
                         report::bar_chart_svg(spec.parameter + " sweep, " + name, categories, {r1, map}));
    }
  }
  return rows;
}

namespace {

struct Overrides {
  std::string config;
  std::string output;
  std::uint64_t seed = 0;
  std::string mode;
  std::vector<std::string> protocols;
  int trials = 0;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "YAML run configuration");
  cmd->add_option("--output", o.output, "Output directory (output_dir)");
  cmd->add_option("--seed", o.seed, "Training seed (train.seed)");
  cmd->add_option("--mode", o.mode, "Ablation mode (train.mode)")
      ->check(CLI::IsMember({"baseline", "clip_pretrained", "clip_vireid", "csdn_mspl_only", "csdn_full"}));
  cmd->add_option("--protocol", o.protocols, "Retrieval protocol, repeatable (eval.protocols)");
  cmd->add_option("--trials", o.trials, "Gallery sampling trials (eval.trials)");
  cmd->add_option("--set", o.sets, "Override any config key: section.key=value, repeatable");
}

RunConfig resolve(const Overrides& o, const CLI::App* cmd) {
  RunConfig c = o.config.empty() ? parse_config("") : load_config(o.config);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(c, s.substr(0, eq), s.substr(eq + 1));
  }
  if (cmd->count("--output")) c.output_dir = o.output;
  if (cmd->count("--seed")) c.train.seed = o.seed;
  if (cmd->count("--mode")) c.train.mode = parse_ablation_mode(o.mode);
  if (cmd->count("--protocol")) c.eval.protocols = o.protocols;
  if (cmd->count("--trials")) c.eval.trials = o.trials;
  c.validate();
  return c;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modality re-identification: data generation, staged training, evaluation"};
  app.require_subcommand(1);
  Overrides o;
  bool force = false, resume = false, plots = false;
  int halt_after = -1;
  std::string checkpoint, sweep;

  auto* gen = app.add_subcommand("generate-data", "Write the synthetic train/test manifests");
  auto* trn = app.add_subcommand("train", "Run the training stages of the configured mode");
  auto* evl = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test manifest");
  auto* swp = app.add_subcommand("sweep", "Grid over one loss weight");
  for (auto* cmd : {gen, trn, evl, swp}) add_common(cmd, o);
  for (auto* cmd : {gen, trn, swp}) cmd->add_flag("--force", force, "Overwrite existing outputs");
  for (auto* cmd : {evl, swp}) cmd->add_flag("--plots", plots, "Emit SVG plots");
  trn->add_flag("--resume", resume, "Continue from resume.ckpt");
  trn->add_option("--halt-after", halt_after, "Stop after N epochs")->group("");
  evl->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate (default checkpoints/hse.ckpt)");
  swp->add_option("--sweep", sweep, "e.g. lambda1=0,0.05,...,0.3")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      cmd_generate_data(resolve(o, gen), force, out);
    } else if (trn->parsed()) {
      if (force && resume) throw ConfigError("--force and --resume are mutually exclusive");
      cmd_train(resolve(o, trn), {force, resume, halt_after}, out);
    } else if (evl->parsed()) {
      cmd_evaluate(resolve(o, evl), {checkpoint, plots}, out);
    } else if (swp->parsed()) {
      cmd_sweep(resolve(o, swp), parse_sweep(sweep), plots, force, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const InputError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace csdn::cli
