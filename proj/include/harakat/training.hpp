#pragma once

// Masked token-classification loss, AdamW and the two-phase trainer.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "harakat/data.hpp"
#include "harakat/evaluation.hpp"
#include "harakat/fusion.hpp"

namespace harakat {

/// Mean over rows with mask != 0 of -log softmax(logits)[label]. Labels at
/// masked rows are ignored. Throws std::invalid_argument when no row is
/// valid, ShapeError for a valid label outside the class range.
Var masked_cross_entropy(const Var& logits, std::span<const int> labels,
                         std::span<const std::uint8_t> mask);

struct AdamWConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerSlot {
  Tensor m;
  Tensor v;
  std::int64_t t = 0;
};

/// Decoupled weight decay:
///   theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta.
/// Parameters that are frozen or carry no gradient are left untouched and
/// their step counters do not advance.
class AdamW {
 public:
  AdamW(ParameterList params, AdamWConfig cfg);

  void step();
  void zero_grad();

  const AdamWConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const ParameterList& parameters() const noexcept { return params_; }
  std::vector<OptimizerSlot>& slots() noexcept { return slots_; }
  const std::vector<OptimizerSlot>& slots() const noexcept { return slots_; }

 private:
  ParameterList params_;
  std::vector<OptimizerSlot> slots_;  // parallel to params_
  AdamWConfig cfg_;
};

enum class DropGranularity { kBatch, kExample };
std::string_view to_string(DropGranularity g);
DropGranularity parse_drop_granularity(std::string_view s);

struct TrainConfig {
  std::size_t batch_size = 32;
  AdamWConfig optimizer;           // lr 1e-5, weight decay 0.01
  int epochs_phase1 = 5;           // speech encoder frozen
  int epochs_phase2 = 5;           // joint
  double speech_drop_prob = 0.5;
  DropGranularity drop_granularity = DropGranularity::kBatch;
  bool augment = true;             // SpecAugment on surviving speech
  std::uint64_t seed = 0;
  std::int64_t max_steps = 0;      // 0: no cap
  bool keep_epoch_checkpoints = true;

  /// Throws ConfigError.
  void validate() const;
  int total_epochs() const { return epochs_phase1 + epochs_phase2; }

  friend bool operator==(const TrainConfig& a, const TrainConfig& b);
};

struct TrainState {
  std::int64_t step = 0;
  int epoch = 0;                   // epoch in progress (or next to start)
  std::size_t batch_in_epoch = 0;  // batches already consumed in `epoch`
  std::mt19937_64 rng;             // speech-drop coins, augment seeds, dropout
  std::int64_t drop_draws = 0;
  std::int64_t drops = 0;
};

struct StepResult {
  double loss = 0.0;
  std::size_t valid_positions = 0;
  std::size_t speech_examples = 0;  // examples that went through the speech path
  bool batch_dropped = false;       // batch-level coin (kBatch only)
};

struct EpochLog {
  int epoch = 0;
  int phase = 1;
  std::int64_t steps = 0;     // global step count at the end of the epoch
  double train_loss = 0.0;    // mean over the epoch's steps
  std::optional<MetricsReport> dev_text_only;
  std::optional<MetricsReport> dev_text_speech;

  nlohmann::json to_json() const;
};

/// Written into checkpoints so that inference can rebuild its inputs.
struct CheckpointExtras {
  CharVocab vocab;
  FeatureConfig features;
};

class Trainer {
 public:
  /// The model must outlive the trainer.
  Trainer(FusionModel& model, TrainConfig cfg);

  /// One optimizer update on a padded batch. Applies the speech-drop coin,
  /// SpecAugment and dropout from the trainer RNG. Throws DivergenceError
  /// on a non-finite loss before touching any parameter.
  StepResult step(const Batch& batch);

  /// Draws one speech-drop coin from the trainer RNG and records it.
  bool draw_speech_drop();

  /// Runs (or resumes) the two-phase schedule. When out_dir is set, a
  /// checkpoint is written at the end of every epoch and the epoch logs are
  /// appended to out_dir/metrics.jsonl.
  std::vector<EpochLog> run(const std::vector<Example>& train, const std::vector<Example>& dev,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                            const CheckpointExtras* extras = nullptr,
                            std::function<void(const EpochLog&)> on_epoch = {});

  /// Batches of `epoch` in training order, shuffled from (seed, epoch).
  std::vector<Batch> epoch_batches(const std::vector<Example>& train, int epoch) const;
  /// Sets speech-encoder trainability for `epoch`.
  void enter_epoch(int epoch);
  int phase_of(int epoch) const { return epoch < cfg_.epochs_phase1 ? 1 : 2; }

  FusionModel& model() noexcept { return model_; }
  AdamW& optimizer() noexcept { return opt_; }
  const AdamW& optimizer() const noexcept { return opt_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  TrainState& state() noexcept { return state_; }
  const TrainState& state() const noexcept { return state_; }
  double empirical_drop_rate() const {
    return state_.drop_draws ? static_cast<double>(state_.drops) / state_.drop_draws : 0.0;
  }

 private:
  FusionModel& model_;
  TrainConfig cfg_;
  AdamW opt_;
  TrainState state_;
};

}  // namespace harakat
