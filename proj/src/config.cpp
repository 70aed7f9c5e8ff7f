#include "csdn/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "csdn/errors.hpp"

namespace csdn {

std::string_view to_string(Profile p) { return p == Profile::kFull ? "full" : "desk"; }

Profile parse_profile(std::string_view s) {
  if (s == "desk") return Profile::kDesk;
  if (s == "full") return Profile::kFull;
  throw ConfigError("unknown profile '" + std::string(s) + "' (desk|full)");
}

RunConfig default_config(Profile profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == Profile::kDesk) {
    // Training from scratch needs a larger step than the 3e-4 peak of the
    // full profile to converge within 5/5/10 epochs.
    c.train.iterations_per_epoch = 150;
    c.train.mspl = {train::Stage::kMspl, 5, train::ScheduleSpec::cosine(3e-3, 5)};
    c.train.sii = {train::Stage::kSii, 5, train::ScheduleSpec::cosine(3e-3, 5)};
    c.train.hse = {train::Stage::kHse, 10, train::ScheduleSpec::warmup_step(3e-3, 3e-5, 1, {6, 8}, 0.1, 10)};
  }
  return c;
}

EncoderConfig RunConfig::encoder_config(const data::ImageShape& shape) const {
  EncoderConfig e;
  e.image_shape = shape;
  e.stem_channels = model.stem_channels;
  e.trunk_channels = model.trunk_channels;
  e.feature_dim = model.feature_dim;
  return e;
}

ModelConfig RunConfig::model_config(const data::ImageShape& shape, int num_identities) const {
  return ModelConfig::for_mode(train.mode, encoder_config(shape), num_identities, model.prompt_tokens,
                               model.token_dim, model.seed);
}

std::string RunConfig::where(const std::string& key) const {
  const auto it = key_lines.find(key);
  if (it == key_lines.end()) return key;
  return key + " (line " + std::to_string(it->second) + ")";
}

namespace {

std::string_view to_string(train::ScheduleSpec::Kind k) {
  return k == train::ScheduleSpec::Kind::kCosine ? "cosine" : "warmup_step";
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const YAML::Node&)> set;
  std::function<YAML::Node(const RunConfig&)> get;
};

// Shortest decimal that parses back to the same double.
YAML::Node encode(double v) {
  char buf[32];
  for (int digits = 1; digits <= 17; ++digits) {
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return YAML::Node(std::string(buf));
}

template <typename T>
YAML::Node encode(const T& v) {
  return YAML::Node(v);
}

template <typename T, typename Access>
Field scalar(std::string key, Access access) {
  return {std::move(key), [access](RunConfig& c, const YAML::Node& n) { access(c) = n.as<T>(); },
          [access](const RunConfig& c) { return encode(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field path_field(std::string key, Access access) {
  return {std::move(key), [access](RunConfig& c, const YAML::Node& n) { access(c) = n.as<std::string>(); },
          [access](const RunConfig& c) { return YAML::Node(access(const_cast<RunConfig&>(c)).string()); }};
}

template <typename Access, typename Parse>
Field enum_field(std::string key, Access access, Parse parse) {
  return {std::move(key), [access, parse](RunConfig& c, const YAML::Node& n) { access(c) = parse(n.as<std::string>()); },
          [access](const RunConfig& c) {
            return YAML::Node(std::string(to_string(access(const_cast<RunConfig&>(c)))));
          }};
}

void add_stage(std::vector<Field>& f, const std::string& name, train::StageConfig train::TrainConfig::* member) {
  const std::string p = "train." + name + ".";
  auto stage = [member](RunConfig& c) -> train::StageConfig& { return c.train.*member; };
  f.push_back(scalar<int>(p + "epochs", [stage](RunConfig& c) -> int& { return stage(c).epochs; }));
  f.push_back(enum_field(
      p + "schedule", [stage](RunConfig& c) -> train::ScheduleSpec::Kind& { return stage(c).schedule.kind; },
      [](const std::string& s) {
        if (s == "cosine") return train::ScheduleSpec::Kind::kCosine;
        if (s == "warmup_step") return train::ScheduleSpec::Kind::kWarmupStep;
        throw ConfigError("expected cosine or warmup_step, got '" + s + "'");
      }));
  f.push_back(scalar<double>(p + "base_lr", [stage](RunConfig& c) -> double& { return stage(c).schedule.base_lr; }));
  f.push_back(scalar<double>(p + "warmup_start_lr",
                             [stage](RunConfig& c) -> double& { return stage(c).schedule.warmup_start_lr; }));
  f.push_back(
      scalar<int>(p + "warmup_epochs", [stage](RunConfig& c) -> int& { return stage(c).schedule.warmup_epochs; }));
  f.push_back(scalar<std::vector<int>>(
      p + "decay_epochs", [stage](RunConfig& c) -> std::vector<int>& { return stage(c).schedule.decay_epochs; }));
  f.push_back(
      scalar<double>(p + "decay_factor", [stage](RunConfig& c) -> double& { return stage(c).schedule.decay_factor; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(enum_field("profile", [](RunConfig& c) -> Profile& { return c.profile; }, parse_profile));
    f.push_back(path_field("output_dir", [](RunConfig& c) -> std::filesystem::path& { return c.output_dir; }));

    using Source = DatasetSection::Source;
    f.push_back({"dataset.source",
                 [](RunConfig& c, const YAML::Node& n) {
                   const auto s = n.as<std::string>();
                   if (s == "synthetic") c.dataset.source = Source::kSynthetic;
                   else if (s == "manifest") c.dataset.source = Source::kManifest;
                   else throw ConfigError("expected synthetic or manifest, got '" + s + "'");
                 },
                 [](const RunConfig& c) {
                   return YAML::Node(c.dataset.source == Source::kSynthetic ? "synthetic" : "manifest");
                 }});
    f.push_back(path_field("dataset.train_manifest",
                           [](RunConfig& c) -> std::filesystem::path& { return c.dataset.train_manifest; }));
    f.push_back(path_field("dataset.test_manifest",
                           [](RunConfig& c) -> std::filesystem::path& { return c.dataset.test_manifest; }));
    const std::string s = "dataset.synthetic.";
    f.push_back(scalar<int>(s + "num_identities", [](RunConfig& c) -> int& { return c.dataset.synthetic.num_identities; }));
    f.push_back(scalar<int>(s + "images_per_id_per_modality",
                            [](RunConfig& c) -> int& { return c.dataset.synthetic.images_per_id_per_modality; }));
    f.push_back(scalar<int>(s + "height", [](RunConfig& c) -> int& { return c.dataset.synthetic.image_shape.height; }));
    f.push_back(scalar<int>(s + "width", [](RunConfig& c) -> int& { return c.dataset.synthetic.image_shape.width; }));
    f.push_back(
        scalar<int>(s + "channels", [](RunConfig& c) -> int& { return c.dataset.synthetic.image_shape.channels; }));
    f.push_back(scalar<std::uint64_t>(s + "seed", [](RunConfig& c) -> std::uint64_t& { return c.dataset.synthetic.seed; }));
    f.push_back(scalar<double>(s + "noise_sigma", [](RunConfig& c) -> double& { return c.dataset.synthetic.noise_sigma; }));
    f.push_back(
        scalar<double>(s + "latent_jitter", [](RunConfig& c) -> double& { return c.dataset.synthetic.latent_jitter; }));
    f.push_back(scalar<int>(s + "latent_dim", [](RunConfig& c) -> int& { return c.dataset.synthetic.latent_dim; }));
    f.push_back(scalar<bool>(s + "disjoint_test_identities",
                             [](RunConfig& c) -> bool& { return c.dataset.synthetic.disjoint_test_identities; }));

    f.push_back(scalar<int>("model.feature_dim", [](RunConfig& c) -> int& { return c.model.feature_dim; }));
    f.push_back(scalar<int>("model.prompt_tokens", [](RunConfig& c) -> int& { return c.model.prompt_tokens; }));
    f.push_back(scalar<int>("model.token_dim", [](RunConfig& c) -> int& { return c.model.token_dim; }));
    f.push_back(scalar<int>("model.stem_channels", [](RunConfig& c) -> int& { return c.model.stem_channels; }));
    f.push_back(scalar<int>("model.trunk_channels", [](RunConfig& c) -> int& { return c.model.trunk_channels; }));
    f.push_back(scalar<std::uint64_t>("model.seed", [](RunConfig& c) -> std::uint64_t& { return c.model.seed; }));
    f.push_back(path_field("model.pretrained_checkpoint",
                           [](RunConfig& c) -> std::filesystem::path& { return c.model.pretrained_checkpoint; }));

    f.push_back(enum_field("train.mode", [](RunConfig& c) -> AblationMode& { return c.train.mode; },
                           [](const std::string& v) { return parse_ablation_mode(v); }));
    f.push_back(enum_field("train.fusion_direction",
                           [](RunConfig& c) -> FusionDirection& { return c.train.fusion_direction; },
                           [](const std::string& v) { return parse_fusion_direction(v); }));
    f.push_back(scalar<std::uint64_t>("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    f.push_back(scalar<int>("train.iterations_per_epoch",
                            [](RunConfig& c) -> int& { return c.train.iterations_per_epoch; }));
    f.push_back(scalar<double>("train.similarity_scale", [](RunConfig& c) -> double& { return c.train.similarity_scale; }));
    f.push_back(scalar<double>("train.lambda1", [](RunConfig& c) -> double& { return c.train.weights.lambda1; }));
    f.push_back(scalar<double>("train.lambda2", [](RunConfig& c) -> double& { return c.train.weights.lambda2; }));
    f.push_back(scalar<double>("train.lambda3", [](RunConfig& c) -> double& { return c.train.weights.lambda3; }));
    f.push_back(scalar<int>("train.batch.identities", [](RunConfig& c) -> int& { return c.train.batch.num_identities; }));
    f.push_back(scalar<int>("train.batch.visible_per_identity",
                            [](RunConfig& c) -> int& { return c.train.batch.visible_per_identity; }));
    f.push_back(scalar<int>("train.batch.infrared_per_identity",
                            [](RunConfig& c) -> int& { return c.train.batch.infrared_per_identity; }));
    f.push_back(scalar<bool>("train.augment.flip", [](RunConfig& c) -> bool& { return c.train.augment.flip; }));
    f.push_back(scalar<int>("train.augment.pad", [](RunConfig& c) -> int& { return c.train.augment.pad; }));
    f.push_back(scalar<double>("train.optimizer.beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; }));
    f.push_back(scalar<double>("train.optimizer.beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; }));
    f.push_back(scalar<double>("train.optimizer.epsilon", [](RunConfig& c) -> double& { return c.train.adam.epsilon; }));
    f.push_back(
        scalar<double>("train.optimizer.weight_decay", [](RunConfig& c) -> double& { return c.train.adam.weight_decay; }));
    add_stage(f, "mspl", &train::TrainConfig::mspl);
    add_stage(f, "sii", &train::TrainConfig::sii);
    add_stage(f, "hse", &train::TrainConfig::hse);

    f.push_back(scalar<std::vector<std::string>>("eval.protocols",
                                                 [](RunConfig& c) -> std::vector<std::string>& { return c.eval.protocols; }));
    f.push_back(scalar<int>("eval.trials", [](RunConfig& c) -> int& { return c.eval.trials; }));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

bool is_section(const std::string& prefix) {
  return std::any_of(fields().begin(), fields().end(),
                     [&](const Field& f) { return f.key.rfind(prefix + ".", 0) == 0; });
}

int line_of(const YAML::Node& n) { return n.Mark().line + 1; }

void apply(RunConfig& c, const Field& field, const YAML::Node& value, int line) {
  const auto fail = [&](const std::string& why) {
    throw ConfigError("config key " + field.key + " (line " + std::to_string(line) + "): " + why);
  };
  try {
    field.set(c, value);
  } catch (const YAML::Exception&) {
    fail("malformed value");
  } catch (const std::exception& e) {
    fail(e.what());
  }
}

void walk(RunConfig& c, const YAML::Node& node, const std::string& prefix) {
  for (const auto& kv : node) {
    const auto name = kv.first.as<std::string>();
    const auto key = prefix.empty() ? name : prefix + "." + name;
    const int line = line_of(kv.first);
    if (const Field* f = find_field(key)) {
      c.key_lines[key] = line;
      if (key != "profile") apply(c, *f, kv.second, line);
    } else if (is_section(key)) {
      if (!kv.second.IsMap()) throw ConfigError("config key " + key + " (line " + std::to_string(line) + "): expected a section");
      walk(c, kv.second, key);
    } else {
      throw ConfigError("unknown config key " + key + " (line " + std::to_string(line) + ")");
    }
  }
}

void sync_schedules(RunConfig& c) {
  for (auto* s : {&c.train.mspl, &c.train.sii, &c.train.hse}) s->schedule.total_epochs = s->epochs;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [&](const std::string& key, const std::string& why) {
    throw ConfigError("config key " + where(key) + ": " + why);
  };
  auto positive = [&](const std::string& key, double v) {
    if (!(v > 0)) fail(key, "must be positive");
  };
  auto non_negative = [&](const std::string& key, double v) {
    if (!(v >= 0)) fail(key, "must be non-negative");
  };

  if (output_dir.empty()) fail("output_dir", "must not be empty");
  if (dataset.source == DatasetSection::Source::kSynthetic) {
    const auto& s = dataset.synthetic;
    positive("dataset.synthetic.num_identities", s.num_identities);
    positive("dataset.synthetic.images_per_id_per_modality", s.images_per_id_per_modality);
    positive("dataset.synthetic.height", s.image_shape.height);
    positive("dataset.synthetic.width", s.image_shape.width);
    if (s.image_shape.channels != 1 && s.image_shape.channels != 3)
      fail("dataset.synthetic.channels", "must be 1 or 3");
    non_negative("dataset.synthetic.noise_sigma", s.noise_sigma);
    non_negative("dataset.synthetic.latent_jitter", s.latent_jitter);
    positive("dataset.synthetic.latent_dim", s.latent_dim);
    if (train.batch.num_identities > s.num_identities)
      fail("train.batch.identities", "exceeds dataset.synthetic.num_identities");
  } else {
    if (dataset.train_manifest.empty()) fail("dataset.train_manifest", "required when dataset.source is manifest");
    if (dataset.test_manifest.empty()) fail("dataset.test_manifest", "required when dataset.source is manifest");
  }

  positive("model.feature_dim", model.feature_dim);
  positive("model.prompt_tokens", model.prompt_tokens);
  positive("model.token_dim", model.token_dim);
  positive("model.stem_channels", model.stem_channels);
  positive("model.trunk_channels", model.trunk_channels);
  if (!model.pretrained_checkpoint.empty() && train.mode != AblationMode::kClipPretrained)
    fail("model.pretrained_checkpoint", "only used by mode clip_pretrained");

  non_negative("train.iterations_per_epoch", train.iterations_per_epoch);
  positive("train.similarity_scale", train.similarity_scale);
  non_negative("train.lambda1", train.weights.lambda1);
  non_negative("train.lambda2", train.weights.lambda2);
  non_negative("train.lambda3", train.weights.lambda3);
  positive("train.batch.identities", train.batch.num_identities);
  positive("train.batch.visible_per_identity", train.batch.visible_per_identity);
  positive("train.batch.infrared_per_identity", train.batch.infrared_per_identity);
  non_negative("train.augment.pad", train.augment.pad);
  if (!(train.adam.beta1 >= 0 && train.adam.beta1 < 1)) fail("train.optimizer.beta1", "must lie in [0, 1)");
  if (!(train.adam.beta2 >= 0 && train.adam.beta2 < 1)) fail("train.optimizer.beta2", "must lie in [0, 1)");
  positive("train.optimizer.epsilon", train.adam.epsilon);
  non_negative("train.optimizer.weight_decay", train.adam.weight_decay);

  for (const auto* s : {&train.mspl, &train.sii, &train.hse}) {
    const std::string p = "train." + std::string(train::to_string(s->stage)) + ".";
    const auto& sc = s->schedule;
    positive(p + "epochs", s->epochs);
    positive(p + "base_lr", sc.base_lr);
    if (sc.total_epochs != s->epochs) fail(p + "epochs", "schedule length differs from epochs");
    if (sc.kind == train::ScheduleSpec::Kind::kWarmupStep) {
      if (sc.warmup_epochs < 0 || sc.warmup_epochs >= s->epochs)
        fail(p + "warmup_epochs", "must lie in [0, epochs)");
      if (sc.warmup_epochs > 0) positive(p + "warmup_start_lr", sc.warmup_start_lr);
      if (!(sc.decay_factor > 0 && sc.decay_factor <= 1)) fail(p + "decay_factor", "must lie in (0, 1]");
      int previous = 0;
      for (int e : sc.decay_epochs) {
        if (e <= previous || e >= s->epochs)
          fail(p + "decay_epochs", "must be increasing and inside (0, epochs)");
        previous = e;
      }
    }
  }

  if (eval.protocols.empty()) fail("eval.protocols", "must list at least one protocol");
  for (const auto& p : eval.protocols) {
    try {
      data::parse_protocol(p);
    } catch (const std::exception& e) {
      fail("eval.protocols", e.what());
    }
  }
  positive("eval.trials", eval.trials);
}

RunConfig parse_config(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::ParserException& e) {
    throw ConfigError("config parse error (line " + std::to_string(e.mark.line + 1) + "): " + e.msg);
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  if (!root.IsMap()) throw ConfigError("config: top level must be a mapping");

  Profile profile = Profile::kDesk;
  if (const auto p = root["profile"]) {
    try {
      profile = parse_profile(p.as<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError("config key profile (line " + std::to_string(line_of(p)) + "): " + e.what());
    }
  }
  RunConfig c = default_config(profile);
  walk(c, root, "");
  sync_schedules(c);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string emit_config(const RunConfig& config) {
  YAML::Node root(YAML::NodeType::Map);
  for (const auto& f : fields()) {
    std::vector<std::string> parts;
    std::stringstream ss(f.key);
    for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
    YAML::Node node = root;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node[parts[i]]) node[parts[i]] = YAML::Node(YAML::NodeType::Map);
      node.reset(node[parts[i]]);
    }
    node[parts.back()] = f.get(config);
  }
  YAML::Emitter out;
  out << root;
  return std::string(out.c_str()) + "\n";
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown config key " + key);
  YAML::Node node;
  try {
    node = YAML::Load(value);
  } catch (const YAML::Exception&) {
    throw ConfigError("config key " + key + ": malformed value '" + value + "'");
  }
  try {
    if (key == "profile") {
      // A profile switch resets every default, so it is only honoured first.
      const auto lines = config.key_lines;
      const auto out = config.output_dir;
      config = default_config(parse_profile(node.as<std::string>()));
      config.key_lines = lines;
      config.output_dir = out;
    } else {
      f->set(config, node);
    }
  } catch (const YAML::Exception&) {
    throw ConfigError("config key " + key + ": malformed value '" + value + "'");
  } catch (const std::exception& e) {
    throw ConfigError("config key " + key + ": " + e.what());
  }
  config.key_lines.erase(key);
  sync_schedules(config);
}

}  // namespace csdn
