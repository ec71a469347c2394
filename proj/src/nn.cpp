#include "harakat/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "harakat/errors.hpp"

namespace harakat {

Var apply_dropout(const Var& x, ForwardContext& ctx) {
  if (!ctx.dropout_active()) return x;
  return ops::dropout(x, ctx.dropout, *ctx.rng);
}

Tensor normal_init(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
  return t;
}

Tensor sinusoidal_positions(std::size_t length, std::size_t d) {
  if (d % 2 != 0) {
    throw std::invalid_argument("sinusoidal_positions: dimension must be even, got " +
                                std::to_string(d));
  }
  Tensor pe(Shape{length, d});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / d);
      pe[pos * d + 2 * i] = static_cast<Real>(std::sin(angle));
      pe[pos * d + 2 * i + 1] = static_cast<Real>(std::cos(angle));
    }
  }
  return pe;
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
               bool use_bias)
    : weight(name + ".weight", normal_init({in, out}, rng)) {
  if (use_bias) bias = Parameter(name + ".bias", Tensor(Shape{out}));
}

Var Linear::forward(const Var& x) const {
  const Var y = ops::matmul(x, weight.var());
  return has_bias() ? ops::add_row(y, bias.var()) : y;
}

LayerNorm::LayerNorm(const std::string& name, std::size_t d)
    : gain(name + ".gain", Tensor(Shape{d}, Real(1))), shift(name + ".shift", Tensor(Shape{d})) {}

Var LayerNorm::forward(const Var& x) const {
  return ops::layer_norm(x, gain.var(), shift.var());
}

Embedding::Embedding(const std::string& name, std::size_t vocab, std::size_t d, std::mt19937_64& rng)
    : table(name + ".table", normal_init({vocab, d}, rng)) {}

Conv1d::Conv1d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::size_t stride, std::size_t pad, std::mt19937_64& rng)
    : kernel_(kernel), stride_(stride), pad_(pad),
      proj_(name, kernel * in_channels, out_channels, rng) {}

Var Conv1d::forward(const Var& x) const {
  return proj_.forward(ops::unfold1d(x, kernel_, stride_, pad_));
}

std::size_t Conv1d::output_length(std::size_t input_length) const {
  return (input_length + 2 * pad_ - kernel_) / stride_ + 1;
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, std::size_t d_model,
                                       std::size_t n_heads, std::mt19937_64& rng)
    : query(name + ".query", d_model, d_model, rng),
      key(name + ".key", d_model, d_model, rng, /*use_bias=*/false),
      value(name + ".value", d_model, d_model, rng),
      output(name + ".output", d_model, d_model, rng),
      d_model_(d_model),
      n_heads_(n_heads) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ShapeError(name + ": model dim " + std::to_string(d_model) +
                     " is not divisible by " + std::to_string(n_heads) + " heads");
  }
}

void MultiHeadAttention::collect(ParameterList& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
}

Var MultiHeadAttention::forward(const Var& queries, const Var& memory, const AttentionMask& mask,
                                std::vector<Tensor>* weights) const {
  if (queries.cols() != d_model_ || memory.cols() != d_model_) {
    throw ShapeError("attention expects model dim " + std::to_string(d_model_) + ", got " +
                     shape_string(queries.shape()) + " / " + shape_string(memory.shape()));
  }
  const Var q = query.forward(queries);
  const Var k = key.forward(memory);
  const Var v = value.forward(memory);
  const std::size_t head_dim = d_model_ / n_heads_;
  const Real inv_sqrt = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(head_dim)));

  std::vector<Var> heads;
  heads.reserve(n_heads_);
  for (std::size_t h = 0; h < n_heads_; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    const Var qh = n_heads_ == 1 ? q : ops::slice_cols(q, lo, hi);
    const Var kh = n_heads_ == 1 ? k : ops::slice_cols(k, lo, hi);
    const Var vh = n_heads_ == 1 ? v : ops::slice_cols(v, lo, hi);
    const Var probs = ops::masked_softmax(ops::scale(ops::matmul_nt(qh, kh), inv_sqrt), mask);
    if (weights) weights->push_back(probs.value());
    heads.push_back(ops::matmul(probs, vh));
  }
  const Var merged = n_heads_ == 1 ? heads.front() : ops::concat_cols(heads);
  return output.forward(merged);
}

FeedForward::FeedForward(const std::string& name, std::size_t d, std::size_t hidden,
                         std::mt19937_64& rng)
    : up(name + ".up", d, hidden, rng), down(name + ".down", hidden, d, rng) {}

TransformerBlock::TransformerBlock(const std::string& name, std::size_t d, std::size_t n_heads,
                                   std::mt19937_64& rng)
    : attn_norm(name + ".attn_norm", d),
      attn(name + ".attn", d, n_heads, rng),
      ffn_norm(name + ".ffn_norm", d),
      ffn(name + ".ffn", d, 4 * d, rng) {}

Var TransformerBlock::forward(const Var& x, const AttentionMask& mask, ForwardContext& ctx) const {
  const Var normed = attn_norm.forward(x);
  const Var h = ops::add(x, apply_dropout(attn.forward(normed, normed, mask), ctx));
  return ops::add(h, apply_dropout(ffn.forward(ffn_norm.forward(h)), ctx));
}

void TransformerBlock::collect(ParameterList& out) {
  attn_norm.collect(out);
  attn.collect(out);
  ffn_norm.collect(out);
  ffn.collect(out);
}

}  // namespace harakat
