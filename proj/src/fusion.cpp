#include "harakat/fusion.hpp"

#include "harakat/errors.hpp"

namespace harakat {

Var downsample_speech(const Var& frames, std::size_t pool_factor) {
  if (pool_factor == 0 || frames.rows() % pool_factor != 0) {
    throw ShapeError("cannot pool " + std::to_string(frames.rows()) + " speech frames by " +
                     std::to_string(pool_factor));
  }
  return ops::mean_pool_rows(frames, pool_factor);
}

std::vector<int> early_fusion_positions(std::size_t speech_tokens, std::size_t text_length) {
  std::vector<int> pos(speech_tokens + text_length);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  return pos;
}

namespace {
ModelConfig validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}
}  // namespace

FusionModel::FusionModel(const ModelConfig& cfg) : cfg_(validated(cfg)) {
  std::mt19937_64 rng(cfg_.init_seed);
  text_ = TextEncoder(cfg_, rng);
  speech_ = SpeechEncoder(cfg_, rng);
  projection_ = Linear("projection", cfg_.d_speech, cfg_.d_text, rng);
  if (cfg_.fusion == FusionMode::kCrossAttention) {
    cross_ = std::make_unique<MultiHeadAttention>("cross_attention", cfg_.d_text,
                                                  cfg_.fusion_heads, rng);
  }
  head_ = Linear("head", cfg_.d_text, cfg_.n_classes, rng);
}

Var FusionModel::forward(std::span<const int> ids, std::span<const std::uint8_t> mask,
                         const MelSpectrogram* mel, ForwardContext& ctx,
                         ForwardTrace* trace) const {
  return cfg_.fusion == FusionMode::kEarly ? forward_early(ids, mask, mel, ctx, trace)
                                           : forward_cross(ids, mask, mel, ctx, trace);
}

Var FusionModel::forward_early(std::span<const int> ids, std::span<const std::uint8_t> mask,
                               const MelSpectrogram* mel, ForwardContext& ctx,
                               ForwardTrace* trace) const {
  if (mask.size() != ids.size()) throw ShapeError("text mask length mismatch");
  const Var text_rows = text_.embed(ids);

  Var rows = text_rows;
  std::size_t speech_rows = 0;
  if (mel != nullptr) {
    const Var frames = speech_.encode(*mel, ctx);
    const Var tokens = project_speech(downsample_speech(frames, cfg_.pool_factor));
    speech_rows = tokens.rows();
    const Var parts[] = {tokens, text_rows};
    rows = ops::concat_rows(parts);
  }

  const auto positions = early_fusion_positions(speech_rows, ids.size());
  std::vector<std::uint8_t> valid(speech_rows, 1);
  valid.insert(valid.end(), mask.begin(), mask.end());

  Var states = text_.encode_sequence(rows, positions, valid, ctx);
  if (speech_rows > 0) states = ops::slice_rows(states, speech_rows, speech_rows + ids.size());

  if (trace) {
    trace->encoder_length = positions.size();
    trace->speech_rows = speech_rows;
    trace->positions = positions;
  }
  return classify(states);
}

Var FusionModel::forward_cross(std::span<const int> ids, std::span<const std::uint8_t> mask,
                               const MelSpectrogram* mel, ForwardContext& ctx,
                               ForwardTrace* trace) const {
  if (!cross_) throw ConfigError("model was not built for cross-attention fusion");
  const TextEncoding text = text_.encode(ids, mask, ctx);
  if (trace) {
    trace->encoder_length = ids.size();
    trace->positions = early_fusion_positions(0, ids.size());
    trace->speech_rows = 0;
  }
  if (mel == nullptr) return classify(text.states);

  const Var speech = project_speech(speech_.encode(*mel, ctx));
  const auto attn_mask = AttentionMask::all(text.states.rows(), speech.rows());
  std::vector<Tensor>* weights = trace ? &trace->cross_attention : nullptr;
  const Var fused = ops::add(text.states, cross_->forward(text.states, speech, attn_mask, weights));
  if (trace) trace->speech_rows = speech.rows();
  return classify(fused);
}

Var FusionModel::text_only_logits(std::span<const int> ids, std::span<const std::uint8_t> mask,
                                  ForwardContext& ctx) const {
  return classify(text_.encode(ids, mask, ctx).states);
}

ParameterList FusionModel::parameters() {
  ParameterList out;
  text_.collect(out);
  speech_.collect(out);
  projection_.collect(out);
  if (cross_) cross_->collect(out);
  head_.collect(out);
  return out;
}

ParameterList FusionModel::speech_encoder_parameters() {
  ParameterList out;
  speech_.collect(out);
  return out;
}

void FusionModel::set_speech_encoder_trainable(bool on) {
  for (Parameter* p : speech_encoder_parameters()) p->set_trainable(on);
}

void FusionModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

std::size_t FusionModel::parameter_count() {
  std::size_t n = 0;
  for (Parameter* p : parameters()) n += p->value().size();
  return n;
}

}  // namespace harakat
