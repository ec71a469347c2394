#pragma once

// Transformer building blocks on top of the autograd ops.

#include <random>
#include <string>
#include <vector>

#include "harakat/autograd.hpp"

namespace harakat {

/// Named trainable tensor. Copies share the underlying value and gradient.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor init, bool trainable = true)
      : name_(std::move(name)), var_(Var::leaf(std::move(init), trainable)) {}

  const std::string& name() const noexcept { return name_; }
  const Var& var() const noexcept { return var_; }
  const Tensor& value() const { return var_.value(); }
  Tensor& mutable_value() { return var_.mutable_value(); }
  const Tensor& grad() const { return var_.grad(); }
  Tensor& grad() { return var_.grad(); }

  bool trainable() const { return var_.requires_grad(); }
  /// A frozen parameter receives no gradient and is skipped by optimizers.
  void set_trainable(bool on) { var_.set_requires_grad(on); }
  void zero_grad() { var_.zero_grad(); }

 private:
  std::string name_;
  Var var_;
};

using ParameterList = std::vector<Parameter*>;

/// Dropout is active only when training is set and an RNG is supplied.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  Real dropout = Real(0);

  bool dropout_active() const { return training && rng != nullptr && dropout > Real(0); }
};

Var apply_dropout(const Var& x, ForwardContext& ctx);

/// Weights ~ N(0, 0.02).
Tensor normal_init(Shape shape, std::mt19937_64& rng, double stddev = 0.02);

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same angle).
/// Throws std::invalid_argument for odd d.
Tensor sinusoidal_positions(std::size_t length, std::size_t d);

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
         bool use_bias = true);

  Var forward(const Var& x) const;
  void collect(ParameterList& out) {
    out.push_back(&weight);
    if (has_bias()) out.push_back(&bias);
  }
  bool has_bias() const { return !bias.name().empty(); }

  Parameter weight;  // [in, out]
  Parameter bias;    // [out]; unnamed and empty when the layer has none
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t d);

  Var forward(const Var& x) const;
  void collect(ParameterList& out) { out.push_back(&gain); out.push_back(&shift); }

  Parameter gain;
  Parameter shift;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, std::size_t vocab, std::size_t d, std::mt19937_64& rng);

  Var forward(std::span<const int> ids) const { return ops::embedding(table.var(), ids); }
  void collect(ParameterList& out) { out.push_back(&table); }

  Parameter table;  // [vocab, d]
};

/// 1-D convolution over frames-major input [T, C_in], zero padded.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, std::size_t stride, std::size_t pad, std::mt19937_64& rng);

  Var forward(const Var& x) const;
  std::size_t output_length(std::size_t input_length) const;
  void collect(ParameterList& out) { proj_.collect(out); }

 private:
  std::size_t kernel_ = 0, stride_ = 1, pad_ = 0;
  Linear proj_;  // [kernel * C_in, C_out]
};

// The key projection has no bias: it adds the same q.b to every score of a
// query, which softmax cancels, so it would never receive gradient.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t d_model, std::size_t n_heads,
                     std::mt19937_64& rng);

  /// Queries come from `queries`, keys and values from `memory`.
  /// When `weights` is non-null, each head's attention matrix is appended.
  Var forward(const Var& queries, const Var& memory, const AttentionMask& mask,
              std::vector<Tensor>* weights = nullptr) const;
  void collect(ParameterList& out);

  std::size_t n_heads() const noexcept { return n_heads_; }
  Linear query, key, value, output;

 private:
  std::size_t d_model_ = 0;
  std::size_t n_heads_ = 1;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(const std::string& name, std::size_t d, std::size_t hidden, std::mt19937_64& rng);

  Var forward(const Var& x) const { return down.forward(ops::gelu(up.forward(x))); }
  void collect(ParameterList& out) { up.collect(out); down.collect(out); }

  Linear up, down;
};

/// Pre-norm encoder block: x + Attn(LN(x)), then + FFN(LN(.)), 4x hidden.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, std::size_t d, std::size_t n_heads, std::mt19937_64& rng);

  Var forward(const Var& x, const AttentionMask& mask, ForwardContext& ctx) const;
  void collect(ParameterList& out);

  LayerNorm attn_norm;
  MultiHeadAttention attn;
  LayerNorm ffn_norm;
  FeedForward ffn;
};

}  // namespace harakat
