#pragma once

// Checkpoint directory layout:
//   manifest.json  config snapshot + {name, shape, dtype, offset, length}
//                  entries for weights.bin and optim.bin
//   weights.bin    raw little-endian f32 parameter data
//   optim.bin      AdamW first and second moments, same layout
//   state.json     step / epoch / RNG state
//   vocab.tsv      character vocabulary

#include <filesystem>
#include <memory>
#include <optional>

#include "harakat/training.hpp"
#include "json.hpp"

namespace harakat {

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FeatureConfig& c);
FeatureConfig feature_config_from_json(const nlohmann::json& j);

/// Writes a complete checkpoint. `trainer` may be null for an inference-only
/// snapshot (no optim.bin / training state).
void save_checkpoint(const std::filesystem::path& dir, FusionModel& model, const Trainer* trainer,
                     const CheckpointExtras& extras);

struct CheckpointInfo {
  ModelConfig model;
  std::optional<TrainConfig> train;
  CheckpointExtras extras;
  nlohmann::json manifest;
};

/// Reads manifest.json and vocab.tsv. Throws ConfigError for a missing or
/// inconsistent checkpoint.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Copies weights into an existing model; names and shapes must match
/// exactly (ConfigError otherwise).
void load_weights(const std::filesystem::path& dir, FusionModel& model);

/// Builds a model from the stored config and loads its weights.
std::unique_ptr<FusionModel> load_model(const std::filesystem::path& dir,
                                        CheckpointInfo* info = nullptr);

/// Restores optimizer moments, step counters and the trainer state.
void load_trainer_state(const std::filesystem::path& dir, Trainer& trainer);

}  // namespace harakat
