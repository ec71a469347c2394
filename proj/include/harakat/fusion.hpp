#pragma once

// Speech+text fusion models and the per-character classification head.
//
// Early fusion: speech frames are mean-pooled `pool_factor` at a time,
// linearly projected to the text width and prepended to the character
// embeddings; the text encoder stack runs over the combined sequence and
// only the text rows are classified.
//
// Cross-attention fusion: both encoders run separately, then one attention
// block lets text states query the projected speech frames (residual), and
// the head classifies the result. Without speech the block is skipped.

#include <memory>
#include <vector>

#include "harakat/encoders.hpp"

namespace harakat {

/// Mean of consecutive groups of `pool_factor` frames. Throws ShapeError
/// when the frame count is not divisible.
Var downsample_speech(const Var& frames, std::size_t pool_factor);

/// Position index of every row of the early-fusion sequence: speech tokens
/// take 0..S-1, text character i takes S + i.
std::vector<int> early_fusion_positions(std::size_t speech_tokens, std::size_t text_length);

/// Filled by forward() when requested; used for inspection and tests.
struct ForwardTrace {
  std::size_t encoder_length = 0;  // rows seen by the text encoder stack
  std::size_t speech_rows = 0;     // speech rows fused with the text
  std::vector<int> positions;
  std::vector<Tensor> cross_attention;  // one [T_text x S] matrix per head
};

class FusionModel {
 public:
  /// Validates cfg and initializes every parameter from cfg.init_seed.
  explicit FusionModel(const ModelConfig& cfg);
  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;

  /// Logits [T_text, 15]. `mel` may be null (text-only path).
  Var forward(std::span<const int> ids, std::span<const std::uint8_t> mask,
              const MelSpectrogram* mel, ForwardContext& ctx,
              ForwardTrace* trace = nullptr) const;
  Var forward_early(std::span<const int> ids, std::span<const std::uint8_t> mask,
                    const MelSpectrogram* mel, ForwardContext& ctx,
                    ForwardTrace* trace = nullptr) const;
  Var forward_cross(std::span<const int> ids, std::span<const std::uint8_t> mask,
                    const MelSpectrogram* mel, ForwardContext& ctx,
                    ForwardTrace* trace = nullptr) const;

  /// head(encode_text(.)) with no speech involvement.
  Var text_only_logits(std::span<const int> ids, std::span<const std::uint8_t> mask,
                       ForwardContext& ctx) const;
  Var project_speech(const Var& speech) const { return projection_.forward(speech); }
  Var classify(const Var& states) const { return head_.forward(states); }

  const ModelConfig& config() const noexcept { return cfg_; }
  const TextEncoder& text_encoder() const noexcept { return text_; }
  const SpeechEncoder& speech_encoder() const noexcept { return speech_; }
  Linear& projection() noexcept { return projection_; }

  /// Every parameter in a fixed order; names are unique.
  ParameterList parameters();
  ParameterList speech_encoder_parameters();
  void set_speech_encoder_trainable(bool on);
  void zero_grad();
  std::size_t parameter_count();

 private:
  ModelConfig cfg_;
  TextEncoder text_;
  SpeechEncoder speech_;
  Linear projection_;
  std::unique_ptr<MultiHeadAttention> cross_;
  Linear head_;
};

}  // namespace harakat
