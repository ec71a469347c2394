#include "harakat/training.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "harakat/checkpoint.hpp"
#include "harakat/errors.hpp"

namespace harakat {

Var masked_cross_entropy(const Var& logits, std::span<const int> labels,
                         std::span<const std::uint8_t> mask) {
  std::size_t valid = 0;
  for (auto m : mask) valid += m != 0;
  if (valid == 0) throw std::invalid_argument("masked_cross_entropy: no valid positions");
  return ops::scale(ops::cross_entropy_sum(logits, labels, mask),
                    static_cast<Real>(1.0 / static_cast<double>(valid)));
}

// ---------------------------------------------------------------------------

AdamW::AdamW(ParameterList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  slots_.reserve(params_.size());
  for (const Parameter* p : params_) {
    slots_.push_back({Tensor(p->value().shape()), Tensor(p->value().shape()), 0});
  }
}

void AdamW::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (!p.trainable() || !p.var().has_grad()) continue;
    OptimizerSlot& s = slots_[k];
    ++s.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    Tensor& theta = p.mutable_value();
    const Tensor& g = p.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double m = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
      const double v = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      s.m[i] = static_cast<Real>(m);
      s.v[i] = static_cast<Real>(v);
      const double update = (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
      const double th = theta[i];
      theta[i] = static_cast<Real>(th - cfg_.lr * update - cfg_.lr * cfg_.weight_decay * th);
    }
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------

std::string_view to_string(DropGranularity g) {
  return g == DropGranularity::kBatch ? "batch" : "example";
}

DropGranularity parse_drop_granularity(std::string_view s) {
  if (s == "batch") return DropGranularity::kBatch;
  if (s == "example") return DropGranularity::kExample;
  throw ConfigError("drop granularity must be \"batch\" or \"example\", got \"" + std::string(s) +
                    "\"");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(optimizer.lr > 0.0)) fail("lr must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(optimizer.eps > 0.0)) fail("eps must be positive");
  if (!(optimizer.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (epochs_phase1 < 0 || epochs_phase2 < 0) fail("epoch counts must be non-negative");
  if (total_epochs() == 0) fail("at least one epoch is required");
  if (!(speech_drop_prob >= 0.0 && speech_drop_prob <= 1.0)) fail("speech_drop_prob must be in [0, 1]");
  if (max_steps < 0) fail("max_steps must be non-negative");
}

bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return a.batch_size == b.batch_size && a.optimizer.lr == b.optimizer.lr &&
         a.optimizer.beta1 == b.optimizer.beta1 && a.optimizer.beta2 == b.optimizer.beta2 &&
         a.optimizer.eps == b.optimizer.eps && a.optimizer.weight_decay == b.optimizer.weight_decay &&
         a.epochs_phase1 == b.epochs_phase1 && a.epochs_phase2 == b.epochs_phase2 &&
         a.speech_drop_prob == b.speech_drop_prob && a.drop_granularity == b.drop_granularity &&
         a.augment == b.augment && a.seed == b.seed && a.max_steps == b.max_steps &&
         a.keep_epoch_checkpoints == b.keep_epoch_checkpoints;
}

nlohmann::json EpochLog::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"phase", phase}, {"steps", steps}, {"train_loss", train_loss}};
  if (dev_text_only) j["dev_text_only"] = dev_text_only->to_json(false);
  if (dev_text_speech) j["dev_text_speech"] = dev_text_speech->to_json(false);
  return j;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(FusionModel& model, TrainConfig cfg)
    : model_(model), cfg_(cfg), opt_(model.parameters(), cfg.optimizer) {
  cfg_.validate();
  state_.rng.seed(cfg_.seed);
  enter_epoch(0);
}

bool Trainer::draw_speech_drop() {
  const bool drop = std::bernoulli_distribution(cfg_.speech_drop_prob)(state_.rng);
  ++state_.drop_draws;
  state_.drops += drop;
  return drop;
}

StepResult Trainer::step(const Batch& batch) {
  StepResult result;
  std::size_t valid = 0;
  for (const auto& m : batch.text_mask) {
    for (auto v : m) valid += v != 0;
  }
  if (valid == 0) throw std::invalid_argument("Trainer::step: batch has no valid positions");
  result.valid_positions = valid;

  // Speech decisions first, then augmentation seeds, then dropout; the order
  // of draws from the trainer RNG is part of the checkpoint contract.
  std::vector<bool> use_speech(batch.size(), false);
  if (cfg_.drop_granularity == DropGranularity::kBatch) {
    result.batch_dropped = draw_speech_drop();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      use_speech[i] = !result.batch_dropped && batch.speech_present[i];
    }
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch.speech_present[i]) use_speech[i] = !draw_speech_drop();
    }
  }
  std::vector<std::optional<MelSpectrogram>> augmented(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!use_speech[i] || !cfg_.augment) continue;
    const MelSpectrogram& mel = *batch.mels[i];
    augmented[i] = spec_augment(mel, AugmentPolicy::defaults_for(mel.n_frames(), state_.rng()));
  }

  opt_.zero_grad();
  ForwardContext ctx;
  ctx.training = true;
  ctx.rng = &state_.rng;
  ctx.dropout = static_cast<Real>(model_.config().dropout);
  const Real inv = static_cast<Real>(1.0 / static_cast<double>(valid));
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& mask = batch.text_mask[i];
    bool any = false;
    for (auto v : mask) any = any || v != 0;
    if (!any) continue;
    const MelSpectrogram* mel = nullptr;
    if (use_speech[i]) {
      mel = augmented[i] ? &*augmented[i] : batch.mels[i].get();
      ++result.speech_examples;
    }
    const Var logits = model_.forward(batch.token_ids[i], mask, mel, ctx);
    const Var loss = ops::scale(ops::cross_entropy_sum(logits, batch.labels[i], mask), inv);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
      opt_.zero_grad();
      throw DivergenceError("loss became non-finite at step " + std::to_string(state_.step + 1));
    }
    total += value;
    backward(loss);
  }
  opt_.step();
  ++state_.step;
  result.loss = total;
  return result;
}

std::vector<Batch> Trainer::epoch_batches(const std::vector<Example>& train, int epoch) const {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 shuffle(seq);
  return make_batches(train, cfg_.batch_size, &shuffle);
}

void Trainer::enter_epoch(int epoch) {
  model_.set_speech_encoder_trainable(phase_of(epoch) == 2);
}

std::vector<EpochLog> Trainer::run(const std::vector<Example>& train, const std::vector<Example>& dev,
                                   const std::optional<std::filesystem::path>& out_dir,
                                   const CheckpointExtras* extras,
                                   std::function<void(const EpochLog&)> on_epoch) {
  if (train.empty()) throw DataError("training set is empty");
  if (out_dir && !extras) throw std::invalid_argument("Trainer::run: checkpoints need vocab/features");
  std::vector<EpochLog> logs;
  auto capped = [&] { return cfg_.max_steps > 0 && state_.step >= cfg_.max_steps; };

  while (state_.epoch < cfg_.total_epochs() && !capped()) {
    enter_epoch(state_.epoch);
    const auto batches = epoch_batches(train, state_.epoch);
    double loss_sum = 0.0;
    std::size_t n = 0;
    while (state_.batch_in_epoch < batches.size() && !capped()) {
      loss_sum += step(batches[state_.batch_in_epoch]).loss;
      ++n;
      ++state_.batch_in_epoch;
    }

    EpochLog log;
    log.epoch = state_.epoch;
    log.phase = phase_of(state_.epoch);
    log.steps = state_.step;
    log.train_loss = n ? loss_sum / static_cast<double>(n) : 0.0;
    if (!dev.empty()) {
      const ModelPredictor predictor(model_);
      log.dev_text_only = evaluate(predictor, dev, EvalMode::kTextOnly);
      log.dev_text_speech = evaluate(predictor, dev, EvalMode::kTextSpeech);
    }
    if (state_.batch_in_epoch >= batches.size()) {
      ++state_.epoch;
      state_.batch_in_epoch = 0;
    }

    if (out_dir) {
      std::filesystem::create_directories(*out_dir);
      if (cfg_.keep_epoch_checkpoints) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch-%03d", log.epoch + 1);
        save_checkpoint(*out_dir / name, model_, this, *extras);
      }
      save_checkpoint(*out_dir / "latest", model_, this, *extras);
      std::ofstream metrics(*out_dir / "metrics.jsonl", std::ios::app);
      metrics << log.to_json().dump() << '\n';
    }
    if (on_epoch) on_epoch(log);
    logs.push_back(std::move(log));
  }
  enter_epoch(std::min(state_.epoch, cfg_.total_epochs() - 1));
  return logs;
}

}  // namespace harakat
