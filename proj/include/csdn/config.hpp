#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "csdn/dataset.hpp"
#include "csdn/encoders.hpp"
#include "csdn/model.hpp"
#include "csdn/trainer.hpp"

namespace csdn {

// `full` is the full-scale schedule (60/60/120 epochs, 3e-4 peak LRs);
// `desk` shortens it to 5/5/10 epochs for the synthetic benchmark.
enum class Profile { kDesk, kFull };

std::string_view to_string(Profile p);
Profile parse_profile(std::string_view s);

struct DatasetSection {
  enum class Source { kSynthetic, kManifest };
  Source source = Source::kSynthetic;
  data::SyntheticSpec synthetic;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

struct ModelSection {
  int feature_dim = 32;
  int prompt_tokens = 4;
  int token_dim = 32;
  int stem_channels = 8;
  int trunk_channels = 16;
  std::uint64_t seed = 3;
  std::filesystem::path pretrained_checkpoint;
};

struct EvalSection {
  std::vector<std::string> protocols{"all-single", "all-multi", "indoor-single", "indoor-multi"};
  int trials = 10;
};

struct RunConfig {
  Profile profile = Profile::kDesk;
  DatasetSection dataset;
  ModelSection model;
  train::TrainConfig train;
  EvalSection eval;
  std::filesystem::path output_dir = "runs/default";
  // Source line of every key read from a file, by dotted path.
  std::map<std::string, int> key_lines;

  // Encoder and model configuration for `num_identities` training classes.
  EncoderConfig encoder_config(const data::ImageShape& shape) const;
  ModelConfig model_config(const data::ImageShape& shape, int num_identities) const;

  // Throws ConfigError naming the offending key.
  void validate() const;
  // "train.seed (line 12)" when the key came from a file, else just the key.
  std::string where(const std::string& key) const;
};

RunConfig default_config(Profile profile);

// Profile defaults overlaid with the document. Unknown keys, malformed
// values and failed validation raise ConfigError with key and line.
RunConfig parse_config(std::string_view yaml_text);
RunConfig load_config(const std::filesystem::path& path);

// Fully resolved config as YAML; parse_config(emit_config(c)) reproduces c.
std::string emit_config(const RunConfig& config);

// Sets one dotted key from its textual value, e.g. ("train.lambda1", "0.1").
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace csdn
