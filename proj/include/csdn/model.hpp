#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "csdn/encoders.hpp"
#include "csdn/fusion.hpp"

namespace csdn {

// Ablation variants, from the plain two-stream baseline to the full model.
enum class AblationMode { kBaseline, kClipPretrained, kClipVireid, kCsdnMsplOnly, kCsdnFull };

std::string_view to_string(AblationMode m);
AblationMode parse_ablation_mode(std::string_view s);

struct ModelConfig {
  EncoderConfig encoder;
  int num_identities = 0;
  int prompt_tokens = 4;
  int token_dim = 32;
  bool with_prompts = true;
  bool shared_prompts = false;
  bool with_fusion = true;
  std::uint64_t seed = 0;

  static ModelConfig for_mode(AblationMode mode, const EncoderConfig& encoder, int num_identities, int prompt_tokens,
                              int token_dim, std::uint64_t seed);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Checkpoint / hashing groups. Every tensor of a model belongs to exactly one.
inline constexpr std::array<std::string_view, 7> kParameterGroups = {
    "stems", "trunk", "head", "prompt_visible", "prompt_infrared", "fusion", "text_encoder_config"};

struct NamedTensor {
  std::string name;
  Matrix* value;
};

struct Model {
  ModelConfig config;
  VisualEncoder visual;
  ClassifierHead head;
  std::optional<PromptBank> prompts;
  std::optional<FusionParams> fusion;
  std::optional<TextEncoder> text_encoder;

  static Model create(const ModelConfig& config);

  bool has_group(std::string_view group) const;
  std::vector<std::string> present_groups() const;
  // Optimizable tensors of a group (empty for text_encoder_config).
  std::vector<nn::NamedParameter> parameters(std::string_view group);
  // Every tensor of a group, including fixed ones.
  std::vector<NamedTensor> tensors(std::string_view group);
  std::size_t parameter_count(std::string_view group);
};

// FNV-1a over tensor names, shapes and raw bytes.
std::uint64_t hash_group(Model& model, std::string_view group);

}  // namespace csdn
