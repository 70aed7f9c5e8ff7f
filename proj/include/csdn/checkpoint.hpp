#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "csdn/model.hpp"
#include "csdn/trainer.hpp"

namespace csdn {

// Binary archive: 8-byte magic, u64 header length, JSON header (model config,
// tensor directory, run state, free-form metadata), raw little-endian float64
// payload, then a u64 FNV-1a checksum of the payload.
struct Checkpoint {
  Model model;
  train::RunState state;
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& path, Model& model, const train::RunState& state,
                     const nlohmann::json& metadata = nlohmann::json::object());

// Rebuilds the model from the stored config. Throws CheckpointError on a
// missing, truncated or corrupt archive.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Loads the stored tensors into an existing model. Every stored group must
// exist in `model` with identical shapes, otherwise CheckpointError.
// When `groups` is non-empty only those groups are restored.
train::RunState load_checkpoint_into(const std::filesystem::path& path, Model& model,
                                     const std::vector<std::string>& groups = {});

}  // namespace csdn
