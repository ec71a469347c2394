#include "harakat/encoders.hpp"

#include "harakat/arabic_text.hpp"
#include "harakat/errors.hpp"

namespace harakat {

std::string_view to_string(FusionMode mode) {
  return mode == FusionMode::kEarly ? "early" : "cross_attention";
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "early") return FusionMode::kEarly;
  if (s == "cross_attention" || s == "cross") return FusionMode::kCrossAttention;
  throw ConfigError("unknown fusion mode '" + std::string(s) +
                    "' (expected early or cross_attention)");
}

ModelConfig ModelConfig::full_scale(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::toy(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_text = c.d_speech = 32;
  c.text_layers = c.speech_layers = 2;
  c.n_heads_text = c.n_heads_speech = c.fusion_heads = 2;
  c.max_text_len = 128;
  c.mel_frames = 200;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (vocab_size < 2) fail("vocab_size must cover the two special ids");
  if (n_classes != DiacriticLabel::kNumClasses) fail("n_classes must be 15");
  if (d_text <= 0 || d_speech <= 0) fail("dimensions must be positive");
  if (d_text % 2 || d_speech % 2) fail("dimensions must be even for sinusoidal positions");
  if (text_layers < 0 || speech_layers < 0) fail("layer counts must be non-negative");
  if (n_heads_text <= 0 || d_text % n_heads_text) fail("d_text must be divisible by n_heads_text");
  if (n_heads_speech <= 0 || d_speech % n_heads_speech) {
    fail("d_speech must be divisible by n_heads_speech");
  }
  if (fusion_heads <= 0 || d_text % fusion_heads) fail("d_text must be divisible by fusion_heads");
  if (mel_bins <= 0) fail("mel_bins must be positive");
  if (mel_frames <= 0 || mel_frames % 2) fail("mel_frames must be positive and even");
  if (pool_factor <= 0 || speech_frames() % pool_factor) {
    fail("speech frames (" + std::to_string(speech_frames()) +
         ") must be divisible by pool_factor " + std::to_string(pool_factor));
  }
  if (max_text_len <= 0) fail("max_text_len must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
}

// ---------------------------------------------------------------------------

namespace {

Var add_positions(const Var& rows, std::span<const int> positions, std::size_t d) {
  if (positions.size() != rows.rows()) {
    throw ShapeError("position map has " + std::to_string(positions.size()) + " entries for " +
                     std::to_string(rows.rows()) + " rows");
  }
  int max_pos = 0;
  for (int p : positions) max_pos = std::max(max_pos, p);
  const Tensor table = sinusoidal_positions(static_cast<std::size_t>(max_pos) + 1, d);
  Tensor pe(Shape{positions.size(), d});
  for (std::size_t i = 0; i < positions.size(); ++i) {
    std::copy_n(table.data() + static_cast<std::size_t>(positions[i]) * d, d, pe.data() + i * d);
  }
  return ops::add(rows, Var::constant(std::move(pe)));
}

}  // namespace

TextEncoder::TextEncoder(const ModelConfig& cfg, std::mt19937_64& rng)
    : d_(cfg.d_text), max_len_(cfg.max_text_len),
      embedding_("text.embedding", static_cast<std::size_t>(cfg.vocab_size), cfg.d_text, rng) {
  for (int i = 0; i < cfg.text_layers; ++i) {
    blocks_.emplace_back("text.blocks." + std::to_string(i), cfg.d_text, cfg.n_heads_text, rng);
  }
  final_norm_ = LayerNorm("text.final_norm", cfg.d_text);
}

Var TextEncoder::embed(std::span<const int> ids) const {
  if (ids.size() > static_cast<std::size_t>(max_len_)) {
    throw ShapeError("text of length " + std::to_string(ids.size()) + " exceeds max_text_len " +
                     std::to_string(max_len_));
  }
  return embedding_.forward(ids);
}

Var TextEncoder::encode_sequence(const Var& rows, std::span<const int> positions,
                                 std::span<const std::uint8_t> valid, ForwardContext& ctx) const {
  if (valid.size() != rows.rows()) throw ShapeError("validity mask length mismatch");
  Var x = add_positions(rows, positions, static_cast<std::size_t>(d_));
  const auto mask = AttentionMask::from_key_validity(rows.rows(), valid);
  for (const auto& block : blocks_) x = block.forward(x, mask, ctx);
  return final_norm_.forward(x);
}

TextEncoding TextEncoder::encode(std::span<const int> ids, std::span<const std::uint8_t> mask,
                                 ForwardContext& ctx) const {
  if (mask.size() != ids.size()) throw ShapeError("text mask length mismatch");
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
  TextEncoding enc;
  enc.states = encode_sequence(embed(ids), positions, mask, ctx);
  enc.mask.assign(mask.begin(), mask.end());
  return enc;
}

void TextEncoder::collect(ParameterList& out) {
  embedding_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  final_norm_.collect(out);
}

// ---------------------------------------------------------------------------

Tensor mel_to_frames_major(const MelSpectrogram& mel) {
  Tensor t(Shape{static_cast<std::size_t>(mel.n_frames()), static_cast<std::size_t>(mel.n_mels())});
  for (int f = 0; f < mel.n_mels(); ++f) {
    for (int i = 0; i < mel.n_frames(); ++i) {
      t[static_cast<std::size_t>(i) * mel.n_mels() + f] = static_cast<Real>(mel.at(f, i));
    }
  }
  return t;
}

SpeechEncoder::SpeechEncoder(const ModelConfig& cfg, std::mt19937_64& rng)
    : mel_bins_(cfg.mel_bins), mel_frames_(cfg.mel_frames), d_(cfg.d_speech),
      conv1_("speech.conv1", cfg.mel_bins, cfg.d_speech, 3, 1, 1, rng),
      conv2_("speech.conv2", cfg.d_speech, cfg.d_speech, 3, 2, 1, rng) {
  for (int i = 0; i < cfg.speech_layers; ++i) {
    blocks_.emplace_back("speech.blocks." + std::to_string(i), cfg.d_speech, cfg.n_heads_speech, rng);
  }
  final_norm_ = LayerNorm("speech.final_norm", cfg.d_speech);
}

Var SpeechEncoder::encode(const MelSpectrogram& mel, ForwardContext& ctx) const {
  if (mel.n_mels() != mel_bins_ || mel.n_frames() != mel_frames_) {
    throw ShapeError("speech encoder expects mel (" + std::to_string(mel_bins_) + ", " +
                     std::to_string(mel_frames_) + "), got (" + std::to_string(mel.n_mels()) +
                     ", " + std::to_string(mel.n_frames()) + ")");
  }
  return encode_frames(Var::constant(mel_to_frames_major(mel)), ctx);
}

Var SpeechEncoder::encode_frames(const Var& frames_major, ForwardContext& ctx) const {
  if (frames_major.rows() != static_cast<std::size_t>(mel_frames_) ||
      frames_major.cols() != static_cast<std::size_t>(mel_bins_)) {
    throw ShapeError("speech encoder input " + shape_string(frames_major.shape()) +
                     " does not match the configured mel shape");
  }
  Var x = ops::gelu(conv1_.forward(frames_major));
  x = ops::gelu(conv2_.forward(x));
  std::vector<int> positions(x.rows());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  x = add_positions(x, positions, static_cast<std::size_t>(d_));
  const auto mask = AttentionMask::all(x.rows(), x.rows());
  for (const auto& block : blocks_) x = block.forward(x, mask, ctx);
  return final_norm_.forward(x);
}

void SpeechEncoder::collect(ParameterList& out) {
  conv1_.collect(out);
  conv2_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  final_norm_.collect(out);
}

}  // namespace harakat
