#include "csdn/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "csdn/errors.hpp"
#include "csdn/losses.hpp"

namespace csdn::eval {

namespace {

void check_sizes(const Ranking& ranking, std::span<const int> query_ids, std::span<const int> gallery_ids,
                 const ValidityMask& valid) {
  if (ranking.rows() != static_cast<Eigen::Index>(query_ids.size()) ||
      ranking.cols() != static_cast<Eigen::Index>(gallery_ids.size()) || valid.rows() != ranking.rows() ||
      valid.cols() != ranking.cols()) {
    throw InputError("ranking, identity lists and validity mask disagree in size");
  }
}

}  // namespace

Ranking rank_gallery(const Matrix& query, const Matrix& gallery) {
  if (gallery.rows() == 0) throw ProtocolError("cannot rank against an empty gallery");
  if (query.cols() != gallery.cols()) throw InputError("query and gallery feature dimensions differ");
  // Similarities are snapped to a 1e-10 grid so that mathematically equal
  // scores tie exactly and fall back to the index order.
  const Matrix sim = ((losses::normalize_rows(query) * losses::normalize_rows(gallery).transpose()).array() * 1e10)
                         .round()
                         .matrix();
  Ranking ranking(query.rows(), gallery.rows());
  std::vector<int> order(static_cast<std::size_t>(gallery.rows()));
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sim(q, a) > sim(q, b); });
    for (std::size_t r = 0; r < order.size(); ++r) ranking(q, static_cast<Eigen::Index>(r)) = order[r];
  }
  return ranking;
}

ValidityMask camera_exclusion_mask(std::span<const int> query_ids, std::span<const int> query_cams,
                                   std::span<const int> gallery_ids, std::span<const int> gallery_cams) {
  ValidityMask valid(static_cast<Eigen::Index>(query_ids.size()), static_cast<Eigen::Index>(gallery_ids.size()));
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    for (std::size_t g = 0; g < gallery_ids.size(); ++g) {
      valid(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(g)) =
          !(query_ids[q] == gallery_ids[g] && query_cams[q] == gallery_cams[g]);
    }
  }
  return valid;
}

CmcResult cmc_curve(const Ranking& ranking, std::span<const int> query_ids, std::span<const int> gallery_ids,
                    const ValidityMask& valid, int max_rank) {
  check_sizes(ranking, query_ids, gallery_ids, valid);
  if (max_rank < 1) throw InputError("max_rank must be >= 1");
  CmcResult out;
  out.cmc.assign(static_cast<std::size_t>(max_rank), 0.0);
  for (Eigen::Index q = 0; q < ranking.rows(); ++q) {
    int position = 0;
    int first_hit = -1;
    for (Eigen::Index r = 0; r < ranking.cols(); ++r) {
      const int g = ranking(q, r);
      if (!valid(q, g)) continue;
      if (gallery_ids[g] == query_ids[q]) {
        first_hit = position;
        break;
      }
      ++position;
    }
    if (first_hit < 0) {
      ++out.dropped_queries;
      continue;
    }
    ++out.scored_queries;
    for (int r = first_hit; r < max_rank; ++r) out.cmc[r] += 1.0;
  }
  if (out.scored_queries > 0)
    for (auto& v : out.cmc) v /= out.scored_queries;
  return out;
}

MapResult mean_average_precision(const Ranking& ranking, std::span<const int> query_ids,
                                 std::span<const int> gallery_ids, const ValidityMask& valid) {
  check_sizes(ranking, query_ids, gallery_ids, valid);
  MapResult out;
  double total = 0.0;
  for (Eigen::Index q = 0; q < ranking.rows(); ++q) {
    int position = 0;
    int hits = 0;
    double precision_sum = 0.0;
    for (Eigen::Index r = 0; r < ranking.cols(); ++r) {
      const int g = ranking(q, r);
      if (!valid(q, g)) continue;
      ++position;
      if (gallery_ids[g] == query_ids[q]) {
        ++hits;
        precision_sum += static_cast<double>(hits) / position;
      }
    }
    if (hits == 0) {
      ++out.dropped_queries;
      continue;
    }
    ++out.scored_queries;
    total += precision_sum / hits;
  }
  out.map = out.scored_queries > 0 ? total / out.scored_queries : 0.0;
  return out;
}

double RetrievalReport::rank(int k) const {
  if (cmc.empty()) return 0.0;
  return cmc[static_cast<std::size_t>(std::clamp(k, 1, static_cast<int>(cmc.size())) - 1)];
}

RetrievalReport evaluate_features(const Matrix& features, const data::DatasetManifest& manifest,
                                  const data::ProtocolSpec& protocol, int num_trials) {
  if (num_trials < 1) throw ConfigError("num_trials must be >= 1");
  if (features.rows() != static_cast<Eigen::Index>(manifest.records.size())) {
    throw InputError("one feature row per manifest record is required");
  }
  RetrievalReport report;
  report.protocol = protocol;
  for (int t = 0; t < num_trials; ++t) {
    data::ProtocolSpec trial = protocol;
    trial.trial_seed = protocol.trial_seed + static_cast<std::uint64_t>(t);
    const auto split = data::protocol_split(manifest, trial);
    if (split.empty_gallery) {
      throw ProtocolError("protocol " + protocol.name() + " leaves the gallery empty");
    }
    std::vector<int> qid, qcam, gid, gcam;
    Matrix q(static_cast<Eigen::Index>(split.query.size()), features.cols());
    Matrix g(static_cast<Eigen::Index>(split.gallery.size()), features.cols());
    for (std::size_t i = 0; i < split.query.size(); ++i) {
      const auto& r = manifest.records[split.query[i]];
      qid.push_back(r.identity);
      qcam.push_back(r.camera_id);
      q.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(split.query[i]));
    }
    for (std::size_t i = 0; i < split.gallery.size(); ++i) {
      const auto& r = manifest.records[split.gallery[i]];
      gid.push_back(r.identity);
      gcam.push_back(r.camera_id);
      g.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(split.gallery[i]));
    }
    const Ranking ranking = rank_gallery(q, g);
    ValidityMask valid = ValidityMask::Constant(q.rows(), g.rows(), true);
    if (protocol.search_mode == data::SearchMode::kAll) valid = camera_exclusion_mask(qid, qcam, gid, gcam);
    const auto cmc = cmc_curve(ranking, qid, gid, valid);
    const auto map = mean_average_precision(ranking, qid, gid, valid);

    TrialMetrics m;
    m.trial_seed = trial.trial_seed;
    m.cmc = cmc.cmc;
    m.map = map.map;
    m.num_queries = static_cast<int>(split.query.size());
    m.num_gallery = static_cast<int>(split.gallery.size());
    m.dropped_queries = cmc.dropped_queries;
    report.trials.push_back(std::move(m));
    if (t == 0) report.excluded_identities = split.excluded_identities;
  }
  report.cmc.assign(report.trials.front().cmc.size(), 0.0);
  for (const auto& t : report.trials) {
    for (std::size_t r = 0; r < report.cmc.size(); ++r) report.cmc[r] += t.cmc[r] / num_trials;
    report.map += t.map / num_trials;
  }
  report.num_queries = report.trials.front().num_queries;
  report.num_gallery = report.trials.front().num_gallery;
  report.dropped_queries = report.trials.front().dropped_queries;
  return report;
}

Matrix extract_features(const VisualEncoder& encoder, const data::DatasetManifest& manifest) {
  constexpr std::size_t kChunk = 64;
  Matrix features(static_cast<Eigen::Index>(manifest.records.size()), encoder.feature_dim());
  std::vector<Modality> modality;
  for (std::size_t start = 0; start < manifest.records.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, manifest.records.size());
    modality.clear();
    for (std::size_t i = start; i < end; ++i) modality.push_back(manifest.records[i].modality);
    const std::span<const data::Image> images(manifest.images.data() + start, end - start);
    features.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        encoder.encode(images, modality);
  }
  return features;
}

RetrievalReport evaluate(const VisualEncoder& encoder, const data::DatasetManifest& manifest,
                         const data::ProtocolSpec& protocol, int num_trials) {
  if (manifest.images.size() != manifest.records.size()) throw DataError("test manifest images are not loaded");
  if (manifest.image_shape != encoder.config().image_shape) {
    throw InputError("test image shape does not match the encoder configuration");
  }
  return evaluate_features(extract_features(encoder, manifest), manifest, protocol, num_trials);
}

void to_json(nlohmann::json& j, const RetrievalReport& r) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : r.trials) {
    trials.push_back({{"trial_seed", t.trial_seed},
                      {"rank1", t.cmc.empty() ? 0.0 : t.cmc[0]},
                      {"cmc", t.cmc},
                      {"map", t.map},
                      {"num_queries", t.num_queries},
                      {"num_gallery", t.num_gallery},
                      {"dropped_queries", t.dropped_queries}});
  }
  j = {{"protocol",
        {{"name", r.protocol.name()},
         {"search_mode", r.protocol.search_mode == data::SearchMode::kAll ? "all" : "indoor"},
         {"gallery_shots", r.protocol.gallery_shots},
         {"direction", r.protocol.direction == data::Direction::kInfraredToVisible ? "ir2vis" : "vis2ir"},
         {"trial_seed", r.protocol.trial_seed}}},
       {"rank1", r.rank(1)},
       {"rank10", r.rank(10)},
       {"rank20", r.rank(20)},
       {"map", r.map},
       {"cmc", r.cmc},
       {"num_queries", r.num_queries},
       {"num_gallery", r.num_gallery},
       {"dropped_queries", r.dropped_queries},
       {"excluded_identities", r.excluded_identities},
       {"trials", trials}};
}

std::string flat_row_header() { return "label\tprotocol\tR1\tR10\tR20\tmAP"; }

std::string flat_row(const std::string& label, const RetrievalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "\t%.1f\t%.1f\t%.1f\t%.1f", 100.0 * r.rank(1), 100.0 * r.rank(10),
                100.0 * r.rank(20), 100.0 * r.map);
  return label + "\t" + r.protocol.name() + buf;
}

}  // namespace csdn::eval
