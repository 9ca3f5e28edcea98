#include "ccot/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "ccot/error.hpp"

namespace ccot::ad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Creates an op result; parents and closure are dropped when no input needs a gradient.
Tensor make_result(std::string_view op, Shape shape, std::vector<float> value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  node->op = op;
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Tensor::from_node(std::move(node));
}

// Gradient buffer of a parent, or nullptr when it does not take gradients.
float* grad_of(const NodePtr& p) {
  if (!p->requires_grad) return nullptr;
  if (p->grad.size() != p->value.size()) p->grad.assign(p->value.size(), 0.0f);
  return p->grad.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    contract_fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class F>
Tensor unary(std::string_view op, const Tensor& x, F&& forward, std::function<void(Node&)> fn) {
  std::vector<float> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_result(op, x.shape(), std::move(out), {x.node_ptr()}, std::move(fn));
}

}  // namespace

// ---- Tensor -------------------------------------------------------------------

Tensor Tensor::from_node(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    contract_fail("tensor: shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                  " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  Tensor t(std::move(node));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.size() < 2) return 1;
  return s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  if (s.empty()) return 1;
  if (s.size() == 1) return s[0];
  return shape_size(s) / s[0];
}

std::span<float> Tensor::mutable_values() {
  require(node_->leaf, "mutable_values: only leaf tensors may be written");
  return node_->value;
}

float Tensor::item() const {
  require(size() == 1, "item: tensor has " + std::to_string(size()) + " elements");
  return node_->value[0];
}

void Tensor::set_requires_grad(bool on) {
  require(node_->leaf, "set_requires_grad: only leaf tensors");
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(node_->value.size(), 0.0f);
  } else {
    std::vector<float>().swap(node_->grad);
  }
}

void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const { return from(node_->shape, node_->value, false); }

// ---- backward -----------------------------------------------------------------

void backward(const Tensor& loss) {
  require(loss.defined() && loss.size() == 1,
          "backward: loss must be a scalar, got shape " + (loss.defined() ? shape_str(loss.shape()) : "<undef>"));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS over nodes that require gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0f);
  }
  if (loss.node()->leaf) {
    loss.node()->grad[0] += 1.0f;
    return;
  }
  loss.node()->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf) continue;
    n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (!n->leaf) std::vector<float>().swap(n->grad);
  }
}

// ---- arithmetic ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, Trans ta, Trans tb) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2");
  require(!(ta == Trans::Yes && tb == Trans::Yes), "matmul: double transpose unsupported");
  const std::size_t m = ta == Trans::No ? a.shape()[0] : a.shape()[1];
  const std::size_t k = ta == Trans::No ? a.shape()[1] : a.shape()[0];
  const std::size_t kb = tb == Trans::No ? b.shape()[0] : b.shape()[1];
  const std::size_t n = tb == Trans::No ? b.shape()[1] : b.shape()[0];
  if (k != kb) {
    contract_fail("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<float> out(m * n);
  kernels::gemm(ta, tb, {m, n, k}, a.data(), a.cols(), b.data(), b.cols(), out.data(), n, false);
  return make_result("matmul", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()}, [=](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    const float* dy = self.grad.data();
    const std::size_t lda = pa->shape[1];
    const std::size_t ldb = pb->shape[1];
    if (float* ga = grad_of(pa)) {
      if (ta == Trans::No && tb == Trans::No) {
        kernels::gemm(Trans::No, Trans::Yes, {m, k, n}, dy, n, pb->value.data(), ldb, ga, lda, true);
      } else if (tb == Trans::Yes) {
        kernels::gemm(Trans::No, Trans::No, {m, k, n}, dy, n, pb->value.data(), ldb, ga, lda, true);
      } else {
        // a stored k x m: dA = B dY^T
        kernels::gemm(Trans::No, Trans::Yes, {k, m, n}, pb->value.data(), ldb, dy, n, ga, lda, true);
      }
    }
    if (float* gb = grad_of(pb)) {
      if (ta == Trans::No && tb == Trans::No) {
        kernels::gemm(Trans::Yes, Trans::No, {k, n, m}, pa->value.data(), lda, dy, n, gb, ldb, true);
      } else if (tb == Trans::Yes) {
        // b stored n x k: dB = dY^T A
        kernels::gemm(Trans::Yes, Trans::No, {n, k, m}, dy, n, pa->value.data(), lda, gb, ldb, true);
      } else {
        kernels::gemm(Trans::No, Trans::No, {k, n, m}, pa->value.data(), lda, dy, n, gb, ldb, true);
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result("add", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
    for (const auto& p : self.parents) {
      if (float* g = grad_of(p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result("sub", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
    if (float* g = grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (float* g = grad_of(self.parents[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result("mul", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (float* g = grad_of(pa)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (float* g = grad_of(pb)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, float factor) {
  return unary(
      "scale", a, [factor](float v) { return v * factor; },
      [factor](Node& self) {
        if (float* g = grad_of(self.parents[0])) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
        }
      });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  require(bias.size() == n, "add_row: bias width " + std::to_string(bias.size()) + " != " + std::to_string(n));
  std::vector<float> out(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bias.values()[c];
  }
  return make_result("add_row", x.shape(), std::move(out), {x.node_ptr(), bias.node_ptr()}, [n](Node& self) {
    if (float* g = grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (float* g = grad_of(self.parents[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](float v) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); },
      [](Node& self) {
        if (float* g = grad_of(self.parents[0])) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const float s = self.value[i];
            g[i] += self.grad[i] * s * (1.0f - s);
          }
        }
      });
}

Tensor log(const Tensor& x) {
  for (float v : x.values()) require(v > 0.0f, "log: non-positive input");
  return unary(
      "log", x, [](float v) { return std::log(v); },
      [](Node& self) {
        const auto& px = self.parents[0];
        if (float* g = grad_of(px)) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / px->value[i];
        }
      });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](float v) { return std::fabs(v); },
      [](Node& self) {
        const auto& px = self.parents[0];
        if (float* g = grad_of(px)) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const float v = px->value[i];
            // subgradient 0 at the kink
            g[i] += v > 0.0f ? self.grad[i] : (v < 0.0f ? -self.grad[i] : 0.0f);
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](Node& self) {
        const auto& px = self.parents[0];
        if (float* g = grad_of(px)) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (px->value[i] > 0.0f) g[i] += self.grad[i];
          }
        }
      });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](float v) { return v / (1.0f + std::exp(-v)); },
      [](Node& self) {
        const auto& px = self.parents[0];
        if (float* g = grad_of(px)) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const float v = px->value[i];
            const float s = 1.0f / (1.0f + std::exp(-v));
            g[i] += self.grad[i] * s * (1.0f + v * (1.0f - s));
          }
        }
      });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t rows = x.rows();
  const std::size_t n = x.cols();
  std::vector<float> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data() + r * n;
    const float mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = std::exp(in[c] - mx);
      total += out[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = static_cast<float>(out[r * n + c] / total);
  }
  return make_result("softmax", x.shape(), std::move(out), {x.node_ptr()}, [rows, n](Node& self) {
    if (float* g = grad_of(self.parents[0])) {
      for (std::size_t r = 0; r < rows; ++r) {
        const float* p = self.value.data() + r * n;
        const float* dy = self.grad.data() + r * n;
        double inner = 0.0;
        for (std::size_t c = 0; c < n; ++c) inner += static_cast<double>(p[c]) * dy[c];
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] += p[c] * (dy[c] - static_cast<float>(inner));
      }
    }
  });
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, float eps) {
  const std::size_t rows = x.rows();
  const std::size_t n = x.cols();
  require(gain.size() == n, "rmsnorm: gain width mismatch");
  std::vector<float> out(x.size());
  std::vector<float> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data() + r * n;
    double ss = 0.0;
    for (std::size_t c = 0; c < n; ++c) ss += static_cast<double>(in[c]) * in[c];
    inv[r] = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(n) + eps));
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = in[c] * inv[r] * gain.values()[c];
  }
  return make_result("rmsnorm", x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr()},
                     [rows, n, inv = std::move(inv)](Node& self) {
                       const auto& px = self.parents[0];
                       const auto& pg = self.parents[1];
                       float* gx = grad_of(px);
                       float* gg = grad_of(pg);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const float* in = px->value.data() + r * n;
                         const float* dy = self.grad.data() + r * n;
                         if (gg) {
                           for (std::size_t c = 0; c < n; ++c) gg[c] += dy[c] * in[c] * inv[r];
                         }
                         if (gx) {
                           // d/dx of x*inv*g: inv*(g*dy) - x*inv^3/n * sum(g*dy*x)
                           double dot = 0.0;
                           for (std::size_t c = 0; c < n; ++c) {
                             dot += static_cast<double>(dy[c]) * pg->value[c] * in[c];
                           }
                           const float coef = static_cast<float>(dot * inv[r] * inv[r] * inv[r] / n);
                           for (std::size_t c = 0; c < n; ++c) {
                             gx[r * n + c] += dy[c] * pg->value[c] * inv[r] - in[c] * coef;
                           }
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require(table.rank() == 2, "embedding: table must be rank 2");
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  std::vector<float> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      contract_fail("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                    std::to_string(vocab));
    }
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d, out.begin() + i * d);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result("embedding", {ids.size(), d}, std::move(out), {table.node_ptr()},
                     [d, idx = std::move(idx)](Node& self) {
                       if (float* g = grad_of(self.parents[0])) {
                         for (std::size_t i = 0; i < idx.size(); ++i) {
                           float* row = g + static_cast<std::size_t>(idx[i]) * d;
                           for (std::size_t c = 0; c < d; ++c) row[c] += self.grad[i * d + c];
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const std::size_t rows = logits.rows();
  const std::size_t vocab = logits.cols();
  require(targets.size() == rows, "cross_entropy: one target per logit row required");
  std::vector<float> probs(logits.size(), 0.0f);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    require(static_cast<std::size_t>(targets[r]) < vocab, "cross_entropy: target outside vocabulary");
    const float* in = logits.data() + r * vocab;
    const float mx = *std::max_element(in, in + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(static_cast<double>(in[c]) - mx);
    const double lse = mx + std::log(z);
    total += lse - in[targets[r]];
    for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] = static_cast<float>(std::exp(in[c] - lse));
    ++counted;
  }
  require(counted > 0, "cross_entropy: no scored targets");
  std::vector<int> tgt(targets.begin(), targets.end());
  const float inv_count = 1.0f / static_cast<float>(counted);
  return make_result("cross_entropy", {}, {static_cast<float>(total / static_cast<double>(counted))},
                     {logits.node_ptr()},
                     [vocab, inv_count, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                       if (float* g = grad_of(self.parents[0])) {
                         const float dy = self.grad[0] * inv_count;
                         for (std::size_t r = 0; r < tgt.size(); ++r) {
                           if (tgt[r] < 0) continue;
                           for (std::size_t c = 0; c < vocab; ++c) g[r * vocab + c] += dy * probs[r * vocab + c];
                           g[r * vocab + static_cast<std::size_t>(tgt[r])] -= dy;
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (float v : x.values()) total += v;
  return make_result("sum", {}, {static_cast<float>(total)}, {x.node_ptr()}, [](Node& self) {
    if (float* g = grad_of(self.parents[0])) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  require(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.size()));
}

// ---- structural -----------------------------------------------------------------

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require(x.rank() == 2, "slice_rows: rank 2 required");
  require(begin <= end && end <= x.rows(), "slice_rows: range [" + std::to_string(begin) + "," +
                                               std::to_string(end) + ") outside " + std::to_string(x.rows()));
  const std::size_t n = x.cols();
  std::vector<float> out(x.values().begin() + begin * n, x.values().begin() + end * n);
  return make_result("slice_rows", {end - begin, n}, std::move(out), {x.node_ptr()}, [begin, n](Node& self) {
    if (float* g = grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.cols() == n, "concat_rows: column mismatch");
    rows += p.rows();
    parents.push_back(p.node_ptr());
  }
  std::vector<float> out;
  out.reserve(rows * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result("concat_rows", {rows, n}, std::move(out), std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (const auto& p : self.parents) {
      if (float* g = grad_of(p)) {
        for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += p->value.size();
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_size(shape) == x.size(), "reshape: element count mismatch");
  std::vector<float> out(x.values().begin(), x.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {x.node_ptr()}, [](Node& self) {
    if (float* g = grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

RopeTable RopeTable::build(std::size_t head_dim, std::size_t max_positions, double base) {
  require(head_dim % 2 == 0, "rope: head_dim must be even");
  RopeTable t;
  t.head_dim = head_dim;
  t.max_positions = max_positions;
  const std::size_t half = head_dim / 2;
  t.cos.resize(max_positions * half);
  t.sin.resize(max_positions * half);
  for (std::size_t pos = 0; pos < max_positions; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(pos) * freq;
      t.cos[pos * half + i] = static_cast<float>(std::cos(angle));
      t.sin[pos * half + i] = static_cast<float>(std::sin(angle));
    }
  }
  return t;
}

Tensor rope(const Tensor& x, std::size_t n_heads, const RopeTable& table, std::size_t first_position) {
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  const std::size_t dh = table.head_dim;
  require(n_heads * dh == d, "rope: width is not n_heads * head_dim");
  require(first_position + rows <= table.max_positions, "rope: position beyond table");
  const std::size_t half = dh / 2;
  const float* cs = table.cos.data();
  const float* sn = table.sin.data();
  std::vector<float> out(x.size());
  for (std::size_t t = 0; t < rows; ++t) {
    const std::size_t pos = first_position + t;
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t j = t * d + h * dh + 2 * i;
        const float c = cs[pos * half + i];
        const float s = sn[pos * half + i];
        const float x0 = x.values()[j];
        const float x1 = x.values()[j + 1];
        out[j] = x0 * c - x1 * s;
        out[j + 1] = x0 * s + x1 * c;
      }
    }
  }
  return make_result("rope", x.shape(), std::move(out), {x.node_ptr()},
                     [rows, d, dh, half, n_heads, first_position, cs, sn](Node& self) {
                       float* g = grad_of(self.parents[0]);
                       if (!g) return;
                       for (std::size_t t = 0; t < rows; ++t) {
                         const std::size_t pos = first_position + t;
                         for (std::size_t h = 0; h < n_heads; ++h) {
                           for (std::size_t i = 0; i < half; ++i) {
                             const std::size_t j = t * d + h * dh + 2 * i;
                             const float c = cs[pos * half + i];
                             const float s = sn[pos * half + i];
                             const float d0 = self.grad[j];
                             const float d1 = self.grad[j + 1];
                             g[j] += d0 * c + d1 * s;
                             g[j + 1] += -d0 * s + d1 * c;
                           }
                         }
                       }
                     });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads) {
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const std::size_t T = q.rows();
  const std::size_t d = q.cols();
  require(n_heads > 0 && d % n_heads == 0, "causal_attention: width not divisible by heads");
  const std::size_t dh = d / n_heads;
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<float> probs(n_heads * T * T, 0.0f);
  std::vector<float> out(T * d);
  std::vector<float> scores(T * T);
  for (std::size_t h = 0; h < n_heads; ++h) {
    kernels::gemm(Trans::No, Trans::Yes, {T, T, dh}, q.data() + h * dh, d, k.data() + h * dh, d, scores.data(), T,
                  false);
    float* p = probs.data() + h * T * T;
    for (std::size_t i = 0; i < T; ++i) {
      const float* srow = scores.data() + i * T;
      float mx = srow[0] * sc;
      for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, srow[j] * sc);
      float total = 0.0f;
      for (std::size_t j = 0; j <= i; ++j) {
        p[i * T + j] = std::exp(srow[j] * sc - mx);
        total += p[i * T + j];
      }
      const float inv = 1.0f / total;
      for (std::size_t j = 0; j <= i; ++j) p[i * T + j] *= inv;
    }
    kernels::gemm(Trans::No, Trans::No, {T, dh, T}, p, T, v.data() + h * dh, d, out.data() + h * dh, d, false);
  }
  return make_result(
      "causal_attention", q.shape(), std::move(out), {q.node_ptr(), k.node_ptr(), v.node_ptr()},
      [T, d, dh, n_heads, sc, probs = std::move(probs)](Node& self) {
        const auto& pq = self.parents[0];
        const auto& pk = self.parents[1];
        const auto& pv = self.parents[2];
        float* gq = grad_of(pq);
        float* gk = grad_of(pk);
        float* gv = grad_of(pv);
        std::vector<float> dp(T * T);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const float* p = probs.data() + h * T * T;
          const float* dout = self.grad.data() + h * dh;
          if (gv) kernels::gemm(Trans::Yes, Trans::No, {T, dh, T}, p, T, dout, d, gv + h * dh, d, true);
          if (!gq && !gk) continue;
          kernels::gemm(Trans::No, Trans::Yes, {T, T, dh}, dout, d, pv->value.data() + h * dh, d, dp.data(), T, false);
          for (std::size_t i = 0; i < T; ++i) {
            float* drow = dp.data() + i * T;
            const float* prow = p + i * T;
            float inner = 0.0f;
            for (std::size_t j = 0; j <= i; ++j) inner += prow[j] * drow[j];
            for (std::size_t j = 0; j <= i; ++j) drow[j] = prow[j] * (drow[j] - inner) * sc;
            for (std::size_t j = i + 1; j < T; ++j) drow[j] = 0.0f;
          }
          if (gq) {
            kernels::gemm(Trans::No, Trans::No, {T, dh, T}, dp.data(), T, pk->value.data() + h * dh, d, gq + h * dh, d,
                          true);
          }
          if (gk) {
            kernels::gemm(Trans::Yes, Trans::No, {T, dh, T}, dp.data(), T, pq->value.data() + h * dh, d, gk + h * dh, d,
                          true);
          }
        }
      });
}

// ---- optimizer ---------------------------------------------------------------

AdamState make_adam(const AdamConfig& config, std::span<const Tensor> leaves) {
  AdamState st;
  st.config = config;
  for (const auto& leaf : leaves) {
    st.first_moment.emplace_back(leaf.size(), 0.0f);
    st.second_moment.emplace_back(leaf.size(), 0.0f);
  }
  return st;
}

void adam_update(AdamState& state, std::span<Tensor> leaves, std::span<const std::span<const float>> grads) {
  require(state.step >= 0, "adam_update: negative step counter");
  require(leaves.size() == grads.size() && leaves.size() == state.first_moment.size(),
          "adam_update: leaf/gradient/state count mismatch");
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    require(grads[i].size() == leaves[i].size() && state.first_moment[i].size() == leaves[i].size(),
            "adam_update: shape mismatch at leaf " + std::to_string(i));
  }
  state.step += 1;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto w = leaves[i].mutable_values();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps) + cfg.weight_decay * w[j];
      w[j] = static_cast<float>(w[j] - cfg.lr * update);
    }
  }
}

void adam_update(AdamState& state, std::span<Tensor> leaves) {
  std::vector<std::span<const float>> grads;
  grads.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    require(leaf.requires_grad(), "adam_update: leaf does not hold a gradient");
    grads.push_back(leaf.grad());
  }
  adam_update(state, leaves, grads);
}

double clip_grad_norm(std::span<Tensor> leaves, double max_norm) {
  double ss = 0.0;
  for (const auto& leaf : leaves) {
    for (float g : leaf.grad()) ss += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const float f = static_cast<float>(max_norm / norm);
    for (auto& leaf : leaves) {
      for (float& g : leaf.mutable_grad()) g *= f;
    }
  }
  return norm;
}

// ---- oracle ----------------------------------------------------------------

std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor& x, double h) {
  require(h > 0.0, "finite_diff_grad: step must be positive");
  auto vals = x.mutable_values();
  std::vector<double> out(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const float orig = vals[i];
    const float up = static_cast<float>(orig + h);
    const float down = static_cast<float>(orig - h);
    vals[i] = up;
    const double fu = f(x);
    vals[i] = down;
    const double fd = f(x);
    vals[i] = orig;
    out[i] = (fu - fd) / (static_cast<double>(up) - static_cast<double>(down));
  }
  return out;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  require(a.size() == b.size(), "relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace ccot::ad
