#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "csdn/config.hpp"
#include "csdn/evaluation.hpp"
#include "csdn/trainer.hpp"

namespace csdn::cli {

// Everything a run writes lives under one output directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path train_manifest() const { return data() / "train.manifest"; }
  std::filesystem::path test_manifest() const { return data() / "test.manifest"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path stage_checkpoint(train::Stage s) const;
  std::filesystem::path resume_checkpoint() const { return root / "resume.ckpt"; }
  std::filesystem::path metrics() const { return root / "metrics.jsonl"; }
  std::filesystem::path freeze_ledger() const { return root / "freeze_ledger.json"; }
  std::filesystem::path resolved_config() const { return root / "config.yaml"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path plots() const { return root / "plots"; }
  std::filesystem::path sweep() const { return root / "sweep"; }
};

struct GenerateResult {
  std::size_t train_records = 0;
  std::size_t test_records = 0;
};

// Writes data/train.manifest and data/test.manifest. Existing files need `force`.
GenerateResult cmd_generate_data(const RunConfig& config, bool force, std::ostream& log);

struct TrainOptions {
  bool force = false;
  bool resume = false;
  // Stop after this many epochs in total (counting resumed ones); -1 runs to the end.
  int halt_after = -1;
};

struct TrainResult {
  bool halted = false;
  std::vector<train::EpochRecord> epochs;  // epochs run by this invocation
  nlohmann::json ledger;
  std::filesystem::path final_checkpoint;
};

TrainResult cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& log);

struct EvaluateOptions {
  std::filesystem::path checkpoint;  // empty: the hse stage checkpoint
  bool plots = false;
};

using LabelledReports = std::vector<std::pair<std::string, eval::RetrievalReport>>;

// One report per configured protocol, written to reports/evaluation.{json,tsv}.
LabelledReports cmd_evaluate(const RunConfig& config, const EvaluateOptions& options, std::ostream& log);

struct SweepSpec {
  std::string parameter;  // lambda1, lambda2 or lambda3
  std::vector<double> values;
};

// "lambda1=0,0.05,...,0.3": an ellipsis continues the step of the two values before it.
SweepSpec parse_sweep(std::string_view text);

struct SweepRow {
  double value = 0.0;
  LabelledReports reports;
};

// Trains the stages before hse once, then hse and evaluation per value.
std::vector<SweepRow> cmd_sweep(const RunConfig& config, const SweepSpec& spec, bool plots, bool force,
                                std::ostream& log);

// reports/<name>.{json,tsv} (and a CMC plot) for rows produced by separate runs.
void write_comparison(const std::filesystem::path& reports_dir, const std::string& name, const LabelledReports& rows,
                      const std::filesystem::path& plot_path = {});

// Full command line. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace csdn::cli
