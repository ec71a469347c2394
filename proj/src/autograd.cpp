#include "harakat/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include "harakat/errors.hpp"
#include "harakat/linalg.hpp"

namespace harakat {

Tensor& detail::Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var Var::constant(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

void Var::zero_grad() { node_->grad = Tensor(); }

Var Var::from_op(Tensor value, std::vector<Var> inputs,
                 std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node_);
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward() needs a scalar root, got " + shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().grad_buffer()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------

AttentionMask::AttentionMask(std::size_t queries, std::size_t keys, std::vector<std::uint8_t> allowed)
    : queries_(queries), keys_(keys), allowed_(std::move(allowed)) {
  if (allowed_.size() != queries_ * keys_) throw ShapeError("attention mask size mismatch");
  for (std::size_t q = 0; q < queries_; ++q) {
    bool any = false;
    for (std::size_t k = 0; k < keys_ && !any; ++k) any = allowed_[q * keys_ + k] != 0;
    if (!any) throw ShapeError("attention mask row " + std::to_string(q) + " allows no key");
  }
}

AttentionMask AttentionMask::all(std::size_t queries, std::size_t keys) {
  return AttentionMask(queries, keys, std::vector<std::uint8_t>(queries * keys, 1));
}

AttentionMask AttentionMask::from_key_validity(std::size_t queries,
                                               std::span<const std::uint8_t> keys) {
  std::vector<std::uint8_t> allowed(queries * keys.size());
  for (std::size_t q = 0; q < queries; ++q) {
    std::copy(keys.begin(), keys.end(), allowed.begin() + q * keys.size());
  }
  return AttentionMask(queries, keys.size(), std::move(allowed));
}

// ---------------------------------------------------------------------------

namespace ops {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string shapes(const Var& a, const Var& b) {
  return shape_string(a.shape()) + " and " + shape_string(b.shape());
}

detail::Node& input(detail::Node& self, std::size_t i) { return *self.inputs[i]; }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul: inner dimensions differ for " + shapes(a, b));
  Tensor out(Shape{m, n});
  linalg::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  return Var::from_op(std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& A = input(self, 0);
    auto& B = input(self, 1);
    if (A.requires_grad) linalg::gemm_nt(self.grad.data(), B.value.data(), A.grad_buffer().data(), m, n, k);
    if (B.requires_grad) linalg::gemm_tn(A.value.data(), self.grad.data(), B.grad_buffer().data(), k, m, n);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  require(b.cols() == k, "matmul_nt: inner dimensions differ for " + shapes(a, b));
  Tensor out(Shape{m, n});
  linalg::gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
  return Var::from_op(std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& A = input(self, 0);
    auto& B = input(self, 1);
    if (A.requires_grad) linalg::gemm_nn(self.grad.data(), B.value.data(), A.grad_buffer().data(), m, n, k);
    if (B.requires_grad) linalg::gemm_tn(self.grad.data(), A.value.data(), B.grad_buffer().data(), n, m, k);
  });
}

Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shapes(a, b));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return Var::from_op(std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t j = 0; j < 2; ++j) {
      auto& in = input(self, j);
      if (!in.requires_grad) continue;
      auto& g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var add_row(const Var& x, const Var& bias) {
  const std::size_t m = x.rows(), n = x.cols();
  require(bias.value().size() == n, "add_row: bias does not match " + shapes(x, bias));
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
  }
  return Var::from_op(std::move(out), {x, bias}, [m, n](detail::Node& self) {
    auto& X = input(self, 0);
    auto& B = input(self, 1);
    if (X.requires_grad) {
      auto& g = X.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
    }
  });
}

Var scale(const Var& x, Real s) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= s;
  return Var::from_op(std::move(out), {x}, [s](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shapes(a, b));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Var::from_op(std::move(out), {a, b}, [](detail::Node& self) {
    auto& A = input(self, 0);
    auto& B = input(self, 1);
    if (A.requires_grad) {
      auto& g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) {
    const double d = v;
    v = static_cast<Real>(0.5 * d * (1.0 + std::erf(d / std::numbers::sqrt2)));
  }
  return Var::from_op(std::move(out), {x}, [](detail::Node& self) {
    auto& X = input(self, 0);
    auto& g = X.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = X.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(d / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * d * d) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      g[i] += static_cast<Real>(self.grad[i] * (cdf + d * pdf));
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  const std::size_t m = x.rows(), n = x.cols();
  require(gamma.value().size() == n && beta.value().size() == n,
          "layer_norm: gain/bias do not match " + shape_string(x.shape()));
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<Real> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = x.value().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[i] = static_cast<Real>(r);
    for (std::size_t j = 0; j < n; ++j) {
      const Real h = static_cast<Real>((row[j] - mean) * r);
      xhat[i * n + j] = h;
      out[i * n + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return Var::from_op(
      std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
        auto& X = input(self, 0);
        auto& G = input(self, 1);
        auto& B = input(self, 2);
        const Tensor& dy = self.grad;
        if (G.requires_grad || B.requires_grad) {
          auto& gg = G.grad_buffer();
          auto& gb = B.grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              if (G.requires_grad) gg[j] += dy[i * n + j] * xhat[i * n + j];
              if (B.requires_grad) gb[j] += dy[i * n + j];
            }
          }
        }
        if (X.requires_grad) {
          auto& gx = X.grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = static_cast<double>(dy[i * n + j]) * G.value[j];
              mean_d += d;
              mean_dx += d * xhat[i * n + j];
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double d = static_cast<double>(dy[i * n + j]) * G.value[j];
              gx[i * n + j] +=
                  static_cast<Real>(rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx));
            }
          }
        }
      });
}

Var masked_softmax(const Var& scores, const AttentionMask& mask) {
  const std::size_t m = scores.rows(), n = scores.cols();
  require(mask.queries() == m && mask.keys() == n,
          "masked_softmax: mask " + std::to_string(mask.queries()) + "x" +
              std::to_string(mask.keys()) + " does not match scores " +
              shape_string(scores.shape()));
  Tensor out(scores.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const Real* s = scores.value().data() + i * n;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.allowed(i, j)) mx = std::max(mx, s[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.allowed(i, j)) {
        const double e = std::exp(static_cast<double>(s[j] - mx));
        out[i * n + j] = static_cast<Real>(e);
        total += e;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.allowed(i, j)) out[i * n + j] = static_cast<Real>(out[i * n + j] / total);
    }
  }
  return Var::from_op(out, {scores}, [m, n, p = out](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(p[i * n + j]) * self.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        const Real pj = p[i * n + j];
        if (pj != Real(0)) g[i * n + j] += static_cast<Real>(pj * (self.grad[i * n + j] - dot));
      }
    }
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x.rows(), n = x.cols();
  require(begin <= end && end <= m, "slice_rows: range out of bounds for " + shape_string(x.shape()));
  Tensor out(Shape{end - begin, n});
  std::copy_n(x.value().data() + begin * n, (end - begin) * n, out.data());
  return Var::from_op(std::move(out), {x}, [begin, n](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x.rows(), n = x.cols();
  require(begin <= end && end <= n, "slice_cols: range out of bounds for " + shape_string(x.shape()));
  const std::size_t w = end - begin;
  Tensor out(Shape{m, w});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(x.value().data() + i * n + begin, w, out.data() + i * w);
  }
  return Var::from_op(std::move(out), {x}, [m, n, w, begin](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows: column mismatch");
    m += p.rows();
  }
  Tensor out(Shape{m, n});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + offset);
    offset += p.value().size();
  }
  return Var::from_op(std::move(out), {parts.begin(), parts.end()}, [](detail::Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t len = in->value.size();
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
      }
      offset += len;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require(p.rows() == m, "concat_cols: row mismatch");
    n += p.cols();
  }
  Tensor out(Shape{m, n});
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.value().data() + i * w, w, out.data() + i * n + col);
    }
    col += w;
  }
  return Var::from_op(std::move(out), {parts.begin(), parts.end()}, [m, n](detail::Node& self) {
    std::size_t col = 0;
    for (auto& in : self.inputs) {
      const std::size_t w = in->value.cols();
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * n + col + j];
        }
      }
      col += w;
    }
  });
}

Var transpose(const Var& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.value()[i * n + j];
  }
  return Var::from_op(std::move(out), {x}, [m, n](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids) {
  const std::size_t vocab = table.rows(), d = table.cols();
  Tensor out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ShapeError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return Var::from_op(std::move(out), {table},
                      [d, idx = std::vector<int>(ids.begin(), ids.end())](detail::Node& self) {
                        auto& g = input(self, 0).grad_buffer();
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                          Real* row = g.data() + static_cast<std::size_t>(idx[i]) * d;
                          for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[i * d + j];
                        }
                      });
}

Var unfold1d(const Var& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const std::size_t T = x.rows(), C = x.cols();
  require(stride > 0 && kernel > 0 && T + 2 * pad >= kernel, "unfold1d: invalid geometry");
  const std::size_t t_out = (T + 2 * pad - kernel) / stride + 1;
  const std::size_t width = kernel * C;
  Tensor out(Shape{t_out, width});
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t j = 0; j < kernel; ++j) {
      const auto src = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      std::copy_n(x.value().data() + static_cast<std::size_t>(src) * C, C, out.data() + t * width + j * C);
    }
  }
  return Var::from_op(std::move(out), {x}, [T, C, t_out, kernel, stride, pad, width](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t t = 0; t < t_out; ++t) {
      for (std::size_t j = 0; j < kernel; ++j) {
        const auto src = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
        Real* row = g.data() + static_cast<std::size_t>(src) * C;
        const Real* grow = self.grad.data() + t * width + j * C;
        for (std::size_t c = 0; c < C; ++c) row[c] += grow[c];
      }
    }
  });
}

Var mean_pool_rows(const Var& x, std::size_t factor) {
  const std::size_t T = x.rows(), d = x.cols();
  require(factor > 0 && T % factor == 0,
          "mean_pool_rows: " + std::to_string(T) + " rows not divisible by " + std::to_string(factor));
  const std::size_t t_out = T / factor;
  Tensor out(Shape{t_out, d});
  std::vector<double> acc(d);
  for (std::size_t k = 0; k < t_out; ++k) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t r = k * factor; r < (k + 1) * factor; ++r) {
      for (std::size_t j = 0; j < d; ++j) acc[j] += x.value()[r * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[k * d + j] = static_cast<Real>(acc[j] / factor);
  }
  return Var::from_op(std::move(out), {x}, [t_out, d, factor](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    const Real inv = Real(1) / static_cast<Real>(factor);
    for (std::size_t k = 0; k < t_out; ++k) {
      for (std::size_t r = k * factor; r < (k + 1) * factor; ++r) {
        for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[k * d + j] * inv;
      }
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (Real v : x.value().values()) s += v;
  return Var::from_op(Tensor(Shape{1}, static_cast<Real>(s)), {x}, [](detail::Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

Var dropout(const Var& x, Real p, std::mt19937_64& rng) {
  if (p <= Real(0)) return x;
  require(p < Real(1), "dropout: rate must be below 1");
  Tensor keep(x.shape());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Real s = Real(1) / (Real(1) - p);
  for (auto& k : keep.values()) k = u(rng) >= p ? s : Real(0);
  return mul(x, Var::constant(std::move(keep)));
}

Var cross_entropy_sum(const Var& logits, std::span<const int> labels,
                      std::span<const std::uint8_t> mask) {
  const std::size_t m = logits.rows(), c = logits.cols();
  require(labels.size() == m && mask.size() == m,
          "cross_entropy_sum: " + std::to_string(labels.size()) + " labels / " +
              std::to_string(mask.size()) + " mask entries for " + shape_string(logits.shape()));
  Tensor probs(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ShapeError("label " + std::to_string(labels[i]) + " at valid position " +
                       std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    }
    const Real* z = logits.value().data() + i * c;
    const double mx = *std::max_element(z, z + c);
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    total += lse - z[labels[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = static_cast<Real>(std::exp(z[j] - lse));
  }
  return Var::from_op(
      Tensor(Shape{1}, static_cast<Real>(total)), {logits},
      [m, c, probs = std::move(probs), lab = std::vector<int>(labels.begin(), labels.end()),
       msk = std::vector<std::uint8_t>(mask.begin(), mask.end())](detail::Node& self) {
        auto& g = input(self, 0).grad_buffer();
        const Real up = self.grad[0];
        for (std::size_t i = 0; i < m; ++i) {
          if (!msk[i]) continue;
          for (std::size_t j = 0; j < c; ++j) {
            const Real target = static_cast<int>(j) == lab[i] ? Real(1) : Real(0);
            g[i * c + j] += up * (probs[i * c + j] - target);
          }
        }
      });
}

}  // namespace ops
}  // namespace harakat
