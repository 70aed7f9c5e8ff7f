#include "csdn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <sstream>

#include "csdn/errors.hpp"

namespace csdn::train {

namespace {

struct Trainable {
  nn::Parameter* param;
  bool decay;
};

std::vector<Trainable> collect_trainable(Model& model, Stage stage) {
  std::vector<Trainable> out;
  for (const auto& group : trainable_groups(stage)) {
    const bool decay = group == "stems" || group == "trunk" || group == "head";
    for (auto& p : model.parameters(group)) out.push_back({p.param, decay});
  }
  return out;
}

void adam_step(std::vector<Trainable>& params, AdamState& state, const AdamHyper& hyper, double lr) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (auto& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].param;
    Matrix g = p.grad;
    if (params[i].decay && hyper.weight_decay > 0.0) g += hyper.weight_decay * p.value;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * g.cwiseProduct(g);
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + hyper.epsilon);
  }
}

Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = src.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

struct ModalityView {
  std::vector<std::size_t> rows;
  std::vector<int> labels;
};

ModalityView view_of(const data::Batch& batch, Modality m) {
  ModalityView v;
  v.rows = batch.rows_of(m);
  for (auto r : v.rows) v.labels.push_back(batch.labels[r]);
  return v;
}

// Contrastive pair (image-to-text + text-to-image) for one modality, with text
// rows taken from `bank` by label. Adds the bank-row gradient into `d_bank`.
double contrastive_pair(const Matrix& features, const ModalityView& view, const Matrix& bank, Matrix& d_bank,
                        double scale, std::map<std::string, double>& comps, const std::string& suffix) {
  const Matrix img = gather_rows(features, view.rows);
  std::vector<std::size_t> ids(view.labels.begin(), view.labels.end());
  const Matrix txt = gather_rows(bank, ids);
  const auto i2t = losses::image_to_text_contrastive(img, txt, scale);
  const auto t2i = losses::text_to_image_contrastive(img, view.labels, txt, scale);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    d_bank.row(static_cast<Eigen::Index>(ids[r])) +=
        i2t.d_text.row(static_cast<Eigen::Index>(r)) + t2i.d_text.row(static_cast<Eigen::Index>(r));
  }
  comps["i2t_" + suffix] += i2t.loss.value;
  comps["t2i_" + suffix] += t2i.loss.value;
  return i2t.loss.value + t2i.loss.value;
}

// Rounds to 15 significant digits, so products such as 3e-4 * 0.1 land on the
// decimal value instead of one ulp away from it.
double snap(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.15g", x);
  return std::strtod(buf, nullptr);
}

void zero_grads(std::vector<Trainable>& params) {
  for (auto& p : params) p.param->zero_grad();
}

void check_prerequisites(Stage stage, const TrainConfig& train, const Model& model, const RunState& state) {
  const auto stages = train.stages();
  if (std::find(stages.begin(), stages.end(), stage) == stages.end()) {
    throw SequencingError("mode " + std::string(to_string(train.mode)) + " does not run stage " +
                          std::string(to_string(stage)));
  }
  for (Stage s : stages) {
    if (s == stage) break;
    if (!state.completed(s)) {
      throw SequencingError("stage " + std::string(to_string(stage)) + " requires stage " +
                            std::string(to_string(s)) + " to have completed first");
    }
  }
  if (stage == Stage::kMspl && !model.prompts) throw SequencingError("stage mspl needs prompt banks in the model");
  if (stage == Stage::kSii && !model.fusion) throw SequencingError("stage sii needs fusion parameters in the model");
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kMspl: return "mspl";
    case Stage::kSii: return "sii";
    case Stage::kHse: return "hse";
  }
  return "unknown";
}

Stage parse_stage(std::string_view s) {
  if (s == "mspl") return Stage::kMspl;
  if (s == "sii") return Stage::kSii;
  if (s == "hse") return Stage::kHse;
  throw InputError("unknown stage '" + std::string(s) + "'");
}

ScheduleSpec ScheduleSpec::cosine(double base_lr, int total_epochs) {
  ScheduleSpec s;
  s.kind = Kind::kCosine;
  s.base_lr = base_lr;
  s.total_epochs = total_epochs;
  return s;
}

ScheduleSpec ScheduleSpec::warmup_step(double base_lr, double warmup_start_lr, int warmup_epochs,
                                       std::vector<int> decay_epochs, double decay_factor, int total_epochs) {
  ScheduleSpec s;
  s.kind = Kind::kWarmupStep;
  s.base_lr = base_lr;
  s.warmup_start_lr = warmup_start_lr;
  s.warmup_epochs = warmup_epochs;
  s.decay_epochs = std::move(decay_epochs);
  s.decay_factor = decay_factor;
  s.total_epochs = total_epochs;
  return s;
}

double lr_at(const ScheduleSpec& schedule, int epoch) {
  if (epoch < 0 || epoch > schedule.total_epochs) {
    throw InputError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(schedule.total_epochs) + "]");
  }
  if (schedule.kind == ScheduleSpec::Kind::kCosine) {
    return 0.5 * schedule.base_lr *
           (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(schedule.total_epochs)));
  }
  if (epoch < schedule.warmup_epochs) {
    return snap(schedule.warmup_start_lr +
                (schedule.base_lr - schedule.warmup_start_lr) * epoch / static_cast<double>(schedule.warmup_epochs));
  }
  double lr = schedule.base_lr;
  for (int d : schedule.decay_epochs)
    if (epoch >= d) lr *= schedule.decay_factor;
  return snap(lr);
}

std::set<std::string> trainable_groups(Stage stage) {
  switch (stage) {
    case Stage::kMspl: return {"prompt_visible", "prompt_infrared"};
    case Stage::kSii: return {"fusion"};
    case Stage::kHse: return {"stems", "trunk", "head"};
  }
  return {};
}

const StageConfig& TrainConfig::stage(Stage s) const {
  switch (s) {
    case Stage::kMspl: return mspl;
    case Stage::kSii: return sii;
    case Stage::kHse: return hse;
  }
  return hse;
}

std::vector<Stage> TrainConfig::stages() const {
  switch (mode) {
    case AblationMode::kBaseline:
    case AblationMode::kClipPretrained: return {Stage::kHse};
    case AblationMode::kClipVireid:
    case AblationMode::kCsdnMsplOnly: return {Stage::kMspl, Stage::kHse};
    case AblationMode::kCsdnFull: return {Stage::kMspl, Stage::kSii, Stage::kHse};
  }
  return {};
}

bool RunState::completed(Stage s) const {
  return std::find(completed_stages.begin(), completed_stages.end(), s) != completed_stages.end();
}

RunState initial_run_state(std::uint64_t seed) {
  RunState s;
  s.rng_state = serialize_rng(std::mt19937_64(seed));
  return s;
}

std::string serialize_rng(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 deserialize_rng(const std::string& state) {
  std::mt19937_64 rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw CheckpointError("corrupt random-generator state");
  return rng;
}

data::Image augment(const data::Image& image, const data::ImageShape& shape, const Augmentation& aug,
                    std::mt19937_64& rng) {
  if (!aug.flip && aug.pad <= 0) return image;
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> offset(0, 2 * std::max(aug.pad, 0));
  const bool flip = aug.flip && coin(rng);
  const int oy = aug.pad > 0 ? offset(rng) - aug.pad : 0;
  const int ox = aug.pad > 0 ? offset(rng) - aug.pad : 0;
  const int H = shape.height;
  const int W = shape.width;
  data::Image out = data::Image::Zero(image.rows(), image.cols());
  for (int h = 0; h < H; ++h) {
    const int sh = h + oy;
    if (sh < 0 || sh >= H) continue;
    for (int w = 0; w < W; ++w) {
      int sw = w + ox;
      if (sw < 0 || sw >= W) continue;
      if (flip) sw = W - 1 - sw;
      out.col(h * W + w) = image.col(sh * W + sw);
    }
  }
  return out;
}

std::optional<PrototypeBanks> stage3_prototypes(const Model& model, const TrainConfig& train) {
  if (!model.prompts || !model.text_encoder) return std::nullopt;
  auto bank = compute_text_bank(*model.prompts, *model.text_encoder);
  PrototypeBanks out;
  if (model.fusion) {
    const Matrix fused = fuse_text_banks(*model.fusion, bank.f_tv, bank.f_tr, train.fusion_direction);
    out.visible = fused;
    out.infrared = fused;
  } else if (model.prompts->config.shared) {
    out.visible = bank.f_tv;
    out.infrared = bank.f_tv;
  } else {
    out.visible = bank.f_tv;
    out.infrared = bank.f_tr;
  }
  return out;
}

RunState run_stage(const StageConfig& config, const TrainConfig& train, Model& model,
                   const data::DatasetManifest& manifest, RunState state, const EpochHook& hook) {
  if (config.epochs < 1) throw ConfigError("stage " + std::string(to_string(config.stage)) + " needs epochs >= 1");
  check_prerequisites(config.stage, train, model, state);

  const bool resuming = state.stage == config.stage && !state.stage_finished && state.next_epoch > 0;
  if (!resuming) {
    if (state.completed(config.stage)) {
      throw SequencingError("stage " + std::string(to_string(config.stage)) + " has already completed");
    }
    state.stage = config.stage;
    state.next_epoch = 0;
    state.stage_finished = false;
    state.adam = {};
  }
  std::mt19937_64 rng = deserialize_rng(state.rng_state);
  std::vector<Trainable> params = collect_trainable(model, config.stage);

  const int iterations = train.iterations_per_epoch > 0
                             ? train.iterations_per_epoch
                             : std::max<int>(1, static_cast<int>(manifest.records.size()) / train.batch.batch_size());
  const double scale = train.similarity_scale;

  for (int epoch = state.next_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config.schedule, epoch);
    std::optional<PrototypeBanks> protos;
    if (config.stage == Stage::kHse) protos = stage3_prototypes(model, train);

    EpochRecord record;
    record.stage = config.stage;
    record.epoch = epoch;
    record.lr = lr;

    for (int it = 0; it < iterations; ++it) {
      data::Batch batch = data::sample_batch(manifest, train.batch, rng);
      for (auto& img : batch.images) img = augment(img, manifest.image_shape, train.augment, rng);
      zero_grads(params);
      const ModalityView vis = view_of(batch, Modality::kVisible);
      const ModalityView ir = view_of(batch, Modality::kInfrared);
      std::map<std::string, double> comps;
      double loss = 0.0;

      switch (config.stage) {
        case Stage::kMspl: {
          const Matrix features = encode_images(model.visual, batch);
          const auto bank = compute_text_bank(*model.prompts, *model.text_encoder);
          Matrix d_tv = Matrix::Zero(bank.f_tv.rows(), bank.f_tv.cols());
          Matrix d_tr = Matrix::Zero(bank.f_tr.rows(), bank.f_tr.cols());
          loss += contrastive_pair(features, vis, bank.f_tv, d_tv, scale, comps, "visible");
          loss += contrastive_pair(features, ir, bank.f_tr, d_tr, scale, comps, "infrared");
          accumulate_prompt_gradients(*model.prompts, *model.text_encoder, d_tv, d_tr);
          break;
        }
        case Stage::kSii: {
          const Matrix features = encode_images(model.visual, batch);
          const auto bank = compute_text_bank(*model.prompts, *model.text_encoder);
          FusionCache cache;
          const Matrix fused = fuse_text_banks(*model.fusion, bank.f_tv, bank.f_tr, train.fusion_direction, &cache);
          Matrix d_fused = Matrix::Zero(fused.rows(), fused.cols());
          loss += contrastive_pair(features, vis, fused, d_fused, scale, comps, "visible");
          loss += contrastive_pair(features, ir, fused, d_fused, scale, comps, "infrared");
          attention_fuse_backward(*model.fusion, cache, d_fused);
          break;
        }
        case Stage::kHse: {
          VisualEncoder::Cache cache;
          const Matrix features = encode_images(model.visual, batch, &cache);
          const Matrix logits = model.head.classify(features);
          Matrix d_features;
          Matrix d_logits;
          losses::LossValue value;
          if (protos) {
            auto r = losses::stage3_total(features, logits, batch.labels, batch.modality, protos->visible,
                                          protos->infrared, train.weights, scale);
            value = std::move(r.loss);
            d_features = std::move(r.d_features);
            d_logits = std::move(r.d_logits);
          } else {
            const auto id = losses::identity_loss(logits, batch.labels);
            const auto wrt = losses::weighted_regularized_triplet(features, batch.labels);
            value = losses::combine_stage3({id.loss.value, wrt.loss.value, 0.0, 0.0}, train.weights);
            d_features = train.weights.lambda1 * wrt.d_input;
            d_logits = id.d_input;
          }
          d_features += model.head.backward(features, d_logits);
          model.visual.backward(cache, d_features);
          loss = value.value;
          comps = value.components;
          break;
        }
      }
      adam_step(params, state.adam, train.adam, lr);
      record.loss += loss / iterations;
      for (const auto& [k, v] : comps) record.components[k] += v / iterations;
    }

    state.next_epoch = epoch + 1;
    state.rng_state = serialize_rng(rng);
    if (state.next_epoch == config.epochs) {
      state.stage_finished = true;
      state.completed_stages.push_back(config.stage);
    }
    for (const auto& g : model.present_groups()) state.group_hashes[g] = hash_group(model, g);
    if (hook && !hook(state, record)) return state;
  }
  return state;
}

}  // namespace csdn::train
