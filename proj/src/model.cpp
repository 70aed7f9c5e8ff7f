#include "csdn/model.hpp"

#include <cstring>

#include <nlohmann/json.hpp>

#include "csdn/errors.hpp"

namespace csdn {

namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  }
};

}  // namespace

std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::kBaseline: return "baseline";
    case AblationMode::kClipPretrained: return "clip_pretrained";
    case AblationMode::kClipVireid: return "clip_vireid";
    case AblationMode::kCsdnMsplOnly: return "csdn_mspl_only";
    case AblationMode::kCsdnFull: return "csdn_full";
  }
  return "unknown";
}

AblationMode parse_ablation_mode(std::string_view s) {
  for (auto m : {AblationMode::kBaseline, AblationMode::kClipPretrained, AblationMode::kClipVireid,
                 AblationMode::kCsdnMsplOnly, AblationMode::kCsdnFull}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("mode must be one of baseline, clip_pretrained, clip_vireid, csdn_mspl_only, csdn_full; got '" +
                    std::string(s) + "'");
}

ModelConfig ModelConfig::for_mode(AblationMode mode, const EncoderConfig& encoder, int num_identities,
                                  int prompt_tokens, int token_dim, std::uint64_t seed) {
  ModelConfig c;
  c.encoder = encoder;
  c.num_identities = num_identities;
  c.prompt_tokens = prompt_tokens;
  c.token_dim = token_dim;
  c.seed = seed;
  c.with_prompts = mode == AblationMode::kClipVireid || mode == AblationMode::kCsdnMsplOnly ||
                   mode == AblationMode::kCsdnFull;
  c.shared_prompts = mode == AblationMode::kClipVireid;
  c.with_fusion = mode == AblationMode::kCsdnFull;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"image_shape", {c.encoder.image_shape.height, c.encoder.image_shape.width, c.encoder.image_shape.channels}},
       {"stem_channels", c.encoder.stem_channels},
       {"trunk_channels", c.encoder.trunk_channels},
       {"feature_dim", c.encoder.feature_dim},
       {"num_identities", c.num_identities},
       {"prompt_tokens", c.prompt_tokens},
       {"token_dim", c.token_dim},
       {"with_prompts", c.with_prompts},
       {"shared_prompts", c.shared_prompts},
       {"with_fusion", c.with_fusion},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const auto& s = j.at("image_shape");
  c.encoder.image_shape = {s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
  c.encoder.stem_channels = j.at("stem_channels").get<int>();
  c.encoder.trunk_channels = j.at("trunk_channels").get<int>();
  c.encoder.feature_dim = j.at("feature_dim").get<int>();
  c.num_identities = j.at("num_identities").get<int>();
  c.prompt_tokens = j.at("prompt_tokens").get<int>();
  c.token_dim = j.at("token_dim").get<int>();
  c.with_prompts = j.at("with_prompts").get<bool>();
  c.shared_prompts = j.at("shared_prompts").get<bool>();
  c.with_fusion = j.at("with_fusion").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

Model Model::create(const ModelConfig& config) {
  if (config.num_identities < 1) throw ConfigError("model needs num_identities >= 1");
  if (config.with_fusion && !config.with_prompts) throw ConfigError("fusion requires prompt banks");
  Model m;
  m.config = config;
  // Separate streams keep the visual initialization identical across modes.
  std::mt19937_64 visual_rng(config.seed);
  m.visual = VisualEncoder(config.encoder, visual_rng);
  std::mt19937_64 head_rng(config.seed + 1);
  m.head = ClassifierHead(config.encoder.feature_dim, config.num_identities, head_rng);
  if (config.with_prompts) {
    PromptConfig pc;
    pc.num_identities = config.num_identities;
    pc.num_tokens = config.prompt_tokens;
    pc.token_dim = config.token_dim;
    pc.shared = config.shared_prompts;
    pc.seed = config.seed + 2;
    m.prompts = PromptBank::create(pc);
    m.text_encoder = TextEncoder(config.token_dim, config.encoder.feature_dim, config.seed + 3);
  }
  if (config.with_fusion) {
    std::mt19937_64 fusion_rng(config.seed + 4);
    m.fusion = FusionParams::create(config.encoder.feature_dim, fusion_rng);
  }
  return m;
}

bool Model::has_group(std::string_view group) const {
  if (group == "stems" || group == "trunk" || group == "head") return true;
  if (group == "prompt_visible" || group == "text_encoder_config") return prompts.has_value();
  if (group == "prompt_infrared") return prompts.has_value() && !prompts->config.shared;
  if (group == "fusion") return fusion.has_value();
  return false;
}

std::vector<std::string> Model::present_groups() const {
  std::vector<std::string> out;
  for (auto g : kParameterGroups)
    if (has_group(g)) out.emplace_back(g);
  return out;
}

std::vector<nn::NamedParameter> Model::parameters(std::string_view group) {
  if (!has_group(group)) return {};
  if (group == "stems") return visual.stem_parameters();
  if (group == "trunk") return visual.trunk_parameters();
  if (group == "head") return {{"weight", &head.weight}};
  if (group == "prompt_visible") return {{"tokens", &prompts->visible_tokens}};
  if (group == "prompt_infrared") return {{"tokens", &prompts->infrared_tokens}};
  if (group == "fusion") return fusion->parameters();
  return {};
}

std::vector<NamedTensor> Model::tensors(std::string_view group) {
  if (group == "text_encoder_config") {
    if (!has_group(group)) return {};
    return {{"projection", &text_encoder->projection.value},
            {"identity_tokens", &prompts->identity_tokens},
            {"context_prefix", &prompts->context_prefix},
            {"context_suffix", &prompts->context_suffix}};
  }
  std::vector<NamedTensor> out;
  for (auto& p : parameters(group)) out.push_back({p.name, &p.param->value});
  return out;
}

std::size_t Model::parameter_count(std::string_view group) {
  std::size_t n = 0;
  for (auto& t : tensors(group)) n += static_cast<std::size_t>(t.value->size());
  return n;
}

std::uint64_t hash_group(Model& model, std::string_view group) {
  Fnv f;
  f.bytes(group.data(), group.size());
  for (auto& t : model.tensors(group)) {
    f.bytes(t.name.data(), t.name.size());
    const std::int64_t shape[2] = {t.value->rows(), t.value->cols()};
    f.bytes(shape, sizeof(shape));
    f.bytes(t.value->data(), static_cast<std::size_t>(t.value->size()) * sizeof(double));
  }
  return f.h;
}

}  // namespace csdn
