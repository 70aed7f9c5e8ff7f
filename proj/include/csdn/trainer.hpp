#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "csdn/dataset.hpp"
#include "csdn/fusion.hpp"
#include "csdn/losses.hpp"
#include "csdn/model.hpp"

namespace csdn::train {

enum class Stage { kMspl = 0, kSii = 1, kHse = 2 };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

struct ScheduleSpec {
  enum class Kind { kCosine, kWarmupStep };
  Kind kind = Kind::kCosine;
  double base_lr = 3e-4;
  double warmup_start_lr = 3e-6;
  int warmup_epochs = 0;
  std::vector<int> decay_epochs;
  double decay_factor = 0.1;
  int total_epochs = 1;

  static ScheduleSpec cosine(double base_lr, int total_epochs);
  static ScheduleSpec warmup_step(double base_lr, double warmup_start_lr, int warmup_epochs,
                                  std::vector<int> decay_epochs, double decay_factor, int total_epochs);
};

// Learning rate at the start of `epoch`, for 0 <= epoch <= total_epochs (the
// upper end is the schedule endpoint). Throws InputError outside that range.
double lr_at(const ScheduleSpec& schedule, int epoch);

struct StageConfig {
  Stage stage = Stage::kHse;
  int epochs = 1;
  ScheduleSpec schedule;
};

// Groups updated by each stage; every other group stays bitwise frozen.
std::set<std::string> trainable_groups(Stage stage);

struct Augmentation {
  bool flip = true;
  int pad = 2;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 5e-4;  // visual groups only
};

struct TrainConfig {
  AblationMode mode = AblationMode::kCsdnFull;
  FusionDirection fusion_direction = FusionDirection::kVisibleQuery;
  data::BatchSpec batch;
  losses::LossWeights weights;
  double similarity_scale = 1.0;
  AdamHyper adam;
  int iterations_per_epoch = 0;  // 0: train records / batch size
  Augmentation augment;
  StageConfig mspl{Stage::kMspl, 60, ScheduleSpec::cosine(3e-4, 60)};
  StageConfig sii{Stage::kSii, 60, ScheduleSpec::cosine(3e-4, 60)};
  StageConfig hse{Stage::kHse, 120, ScheduleSpec::warmup_step(3e-4, 3e-6, 10, {40, 70}, 0.1, 120)};
  std::uint64_t seed = 1;

  const StageConfig& stage(Stage s) const;
  // Stages run by this ablation mode, in order.
  std::vector<Stage> stages() const;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

struct RunState {
  Stage stage = Stage::kMspl;
  int next_epoch = 0;
  bool stage_finished = false;
  std::string rng_state;
  AdamState adam;
  std::vector<Stage> completed_stages;
  std::map<std::string, std::uint64_t> group_hashes;

  bool completed(Stage s) const;
};

RunState initial_run_state(std::uint64_t seed);

struct EpochRecord {
  Stage stage = Stage::kMspl;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::map<std::string, double> components;
};

// Called after every epoch with the state to resume from; return false to stop.
using EpochHook = std::function<bool(const RunState&, const EpochRecord&)>;

// Runs (or resumes, when `state.stage == config.stage` and the stage is not
// finished) one stage of the three-stage schedule. Throws SequencingError when
// a prerequisite stage has not completed.
RunState run_stage(const StageConfig& config, const TrainConfig& train, Model& model,
                   const data::DatasetManifest& manifest, RunState state, const EpochHook& hook = {});

// The prototype banks handed to stage 3 for the given mode: f_ts for the full
// model, f_tv / f_tr for the two-bank ablation, the shared f_t otherwise.
struct PrototypeBanks {
  Matrix visible;
  Matrix infrared;
};
std::optional<PrototypeBanks> stage3_prototypes(const Model& model, const TrainConfig& train);

data::Image augment(const data::Image& image, const data::ImageShape& shape, const Augmentation& aug,
                    std::mt19937_64& rng);

std::string serialize_rng(const std::mt19937_64& rng);
std::mt19937_64 deserialize_rng(const std::string& state);

}  // namespace csdn::train
