#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "harakat/audio.hpp"
#include "harakat/nn.hpp"

namespace harakat {

enum class FusionMode { kEarly, kCrossAttention };

std::string_view to_string(FusionMode mode);
/// Accepts "early" and "cross_attention" (or "cross"). Throws ConfigError.
FusionMode parse_fusion_mode(std::string_view s);

struct ModelConfig {
  FusionMode fusion = FusionMode::kEarly;
  int vocab_size = 2;
  int n_classes = 15;

  int d_text = 512;
  int text_layers = 6;
  int n_heads_text = 8;

  int d_speech = 512;
  int speech_layers = 6;
  int n_heads_speech = 8;

  int fusion_heads = 8;  // heads of the single cross-attention block
  int pool_factor = 10;
  int max_text_len = 512;
  int mel_bins = 80;
  int mel_frames = 3000;
  double dropout = 0.1;
  std::uint64_t init_seed = 0;

  /// Whisper-base sized speech encoder, equally sized text encoder.
  static ModelConfig full_scale(int vocab_size);
  /// d = 32, two layers and two heads per encoder, 2 s of audio.
  static ModelConfig toy(int vocab_size);

  /// Throws ConfigError when a divisibility or range rule fails.
  void validate() const;

  int speech_frames() const { return mel_frames / 2; }
  int speech_tokens() const { return speech_frames() / pool_factor; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TextEncoding {
  Var states;                       // [T, d_text]
  std::vector<std::uint8_t> mask;   // 1 at real characters
};

/// Character transformer: embedding + sinusoidal positions + pre-norm blocks
/// + final layer norm. Self-attention only sees valid positions.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const ModelConfig& cfg, std::mt19937_64& rng);

  Var embed(std::span<const int> ids) const;
  /// Runs the block stack over precomputed row embeddings. positions[i] is
  /// the sinusoid index added to row i; valid[i] gates row i as a key.
  Var encode_sequence(const Var& rows, std::span<const int> positions,
                      std::span<const std::uint8_t> valid, ForwardContext& ctx) const;
  TextEncoding encode(std::span<const int> ids, std::span<const std::uint8_t> mask,
                      ForwardContext& ctx) const;

  void collect(ParameterList& out);

 private:
  int d_ = 0;
  int max_len_ = 0;
  Embedding embedding_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
};

/// Whisper-style encoder: conv(k3, s1) + GELU, conv(k3, s2) + GELU,
/// sinusoidal positions, pre-norm blocks, final layer norm. No padding mask.
class SpeechEncoder {
 public:
  SpeechEncoder() = default;
  SpeechEncoder(const ModelConfig& cfg, std::mt19937_64& rng);

  /// mel must be (mel_bins, mel_frames); result is [mel_frames / 2, d_speech].
  Var encode(const MelSpectrogram& mel, ForwardContext& ctx) const;
  /// Same, taking a frames-major [mel_frames, mel_bins] input.
  Var encode_frames(const Var& frames_major, ForwardContext& ctx) const;

  void collect(ParameterList& out);

 private:
  int mel_bins_ = 0;
  int mel_frames_ = 0;
  int d_ = 0;
  Conv1d conv1_, conv2_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
};

/// Frames-major copy of a spectrogram as a constant [n_frames, n_mels].
Tensor mel_to_frames_major(const MelSpectrogram& mel);

}  // namespace harakat
