#pragma once

// Tape-free reverse-mode differentiation: every op result remembers its
// inputs and a closure that pushes its gradient back to them. backward()
// walks the recorded graph in reverse topological order.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "harakat/tensor.hpp"

namespace harakat {

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};
}  // namespace detail

class Var {
 public:
  Var() = default;

  /// Input that never receives a gradient.
  static Var constant(Tensor value);
  /// Differentiable leaf (parameters, grad-check inputs).
  static Var leaf(Tensor value, bool requires_grad = true);

  const Tensor& value() const { return node_->value; }
  /// In-place access for optimizers and grad checking. Never call while a
  /// graph that reads this value still needs to run backward.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad_buffer(); }
  Tensor& grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  /// Releases the gradient; has_grad() is false until the next backward.
  void zero_grad();

  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  explicit operator bool() const { return static_cast<bool>(node_); }
  bool same_node(const Var& other) const { return node_ == other.node_; }

  // Used by op implementations.
  static Var from_op(Tensor value, std::vector<Var> inputs,
                     std::function<void(detail::Node&)> backward);
  detail::Node& node() const { return *node_; }

 private:
  explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Seeds d(root)/d(root) = 1 and accumulates gradients into every
/// reachable node with requires_grad. root must hold a single element.
void backward(const Var& root);

/// Per-key (column) validity broadcast over query rows, or an explicit
/// [queries x keys] matrix. Every query row needs at least one allowed key.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t queries, std::size_t keys, std::vector<std::uint8_t> allowed);

  static AttentionMask all(std::size_t queries, std::size_t keys);
  static AttentionMask from_key_validity(std::size_t queries, std::span<const std::uint8_t> keys);

  std::size_t queries() const noexcept { return queries_; }
  std::size_t keys() const noexcept { return keys_; }
  bool allowed(std::size_t q, std::size_t k) const { return allowed_[q * keys_ + k] != 0; }

 private:
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<std::uint8_t> allowed_;
};

namespace ops {

Var matmul(const Var& a, const Var& b);        // [m,k] x [k,n]
Var matmul_nt(const Var& a, const Var& b);     // [m,k] x [n,k]^T
Var add(const Var& a, const Var& b);           // same shape
Var add_row(const Var& x, const Var& bias);    // [m,n] + [n]
Var scale(const Var& x, Real s);
Var mul(const Var& a, const Var& b);           // element-wise, same shape
Var gelu(const Var& x);                        // exact (erf) form
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = Real(1e-5));
/// Row softmax restricted to allowed entries; disallowed entries are 0.
Var masked_softmax(const Var& scores, const AttentionMask& mask);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var transpose(const Var& x);
/// Row gather from a [vocab, d] table. Throws ShapeError on ids >= vocab.
Var embedding(const Var& table, std::span<const int> ids);
/// [T, C] -> [T_out, kernel * C] with zero padding; column block j holds the
/// input frame at offset j - pad of the output frame's window.
Var unfold1d(const Var& x, std::size_t kernel, std::size_t stride, std::size_t pad);
/// Means of consecutive non-overlapping groups of `factor` rows.
Var mean_pool_rows(const Var& x, std::size_t factor);
Var sum(const Var& x);
/// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, Real p, std::mt19937_64& rng);
/// Sum over rows with mask != 0 of -log softmax(logits[row])[label].
Var cross_entropy_sum(const Var& logits, std::span<const int> labels,
                      std::span<const std::uint8_t> mask);

}  // namespace ops
}  // namespace harakat
