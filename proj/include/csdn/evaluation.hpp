#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "csdn/dataset.hpp"
#include "csdn/encoders.hpp"
#include "csdn/types.hpp"

namespace csdn::eval {

using Ranking = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// valid(q, g) is false when gallery entry g must be ignored for query q.
using ValidityMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kDefaultMaxRank = 20;

// Gallery indices per query by descending cosine similarity, ties broken by
// ascending gallery index (scores equal to within 1e-10 count as ties).
// Throws ProtocolError on an empty gallery.
Ranking rank_gallery(const Matrix& query, const Matrix& gallery);

// Invalidates gallery entries sharing both identity and camera with the query.
ValidityMask camera_exclusion_mask(std::span<const int> query_ids, std::span<const int> query_cams,
                                   std::span<const int> gallery_ids, std::span<const int> gallery_cams);

struct CmcResult {
  std::vector<double> cmc;  // cmc[r]: fraction of scored queries hit within rank r + 1
  int scored_queries = 0;
  int dropped_queries = 0;  // no valid correct match in the gallery
};

CmcResult cmc_curve(const Ranking& ranking, std::span<const int> query_ids, std::span<const int> gallery_ids,
                    const ValidityMask& valid, int max_rank = kDefaultMaxRank);

struct MapResult {
  double map = 0.0;
  int scored_queries = 0;
  int dropped_queries = 0;
};

MapResult mean_average_precision(const Ranking& ranking, std::span<const int> query_ids,
                                 std::span<const int> gallery_ids, const ValidityMask& valid);

struct TrialMetrics {
  std::uint64_t trial_seed = 0;
  std::vector<double> cmc;
  double map = 0.0;
  int num_queries = 0;
  int num_gallery = 0;
  int dropped_queries = 0;
};

struct RetrievalReport {
  data::ProtocolSpec protocol;
  std::vector<double> cmc;
  double map = 0.0;
  std::vector<TrialMetrics> trials;
  int num_queries = 0;
  int num_gallery = 0;
  int dropped_queries = 0;
  std::vector<int> excluded_identities;

  // CMC at 1-based rank k (clamped to the curve length).
  double rank(int k) const;
};

// Scores precomputed per-record features (row i belongs to manifest record i).
RetrievalReport evaluate_features(const Matrix& features, const data::DatasetManifest& manifest,
                                  const data::ProtocolSpec& protocol, int num_trials);

// Encodes every test record with the dual-stream encoder, then scores.
Matrix extract_features(const VisualEncoder& encoder, const data::DatasetManifest& manifest);
RetrievalReport evaluate(const VisualEncoder& encoder, const data::DatasetManifest& manifest,
                         const data::ProtocolSpec& protocol, int num_trials);

void to_json(nlohmann::json& j, const RetrievalReport& r);
// Tab-separated "label protocol R1 R10 R20 mAP" row, metrics in percent.
std::string flat_row_header();
std::string flat_row(const std::string& label, const RetrievalReport& r);

}  // namespace csdn::eval
