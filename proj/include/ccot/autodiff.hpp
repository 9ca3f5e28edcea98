#pragma once
// Reverse-mode differentiation over dense row-major float tensors.
//
// Every op records its parents and a backward closure only when at least one
// input requires a gradient, so graphs built from frozen parameters are free
// to drop as soon as the forward value is read. Leaves own their gradient
// buffers; intermediate gradients live only for the duration of backward().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ccot/kernels.hpp"

namespace ccot::ad {

using Shape = std::vector<std::size_t>;
using kernels::Trans;

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<Node> node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Matrix view: rank 0 -> 1x1, rank 1 -> 1xn.
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const float> values() const { return node_->value; }
  // Only leaves may be written; interior nodes are results of recorded ops.
  std::span<float> mutable_values();
  const float* data() const { return node_->value.data(); }
  float item() const;
  float at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  void set_requires_grad(bool on);
  // Empty span when requires_grad is false.
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return node_->grad; }
  void zero_grad();

  // New constant leaf holding a copy of the current values.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Accumulates d(loss)/d(leaf) into every reachable requires_grad leaf.
// Throws ContractError unless loss holds exactly one element.
void backward(const Tensor& loss);

// ---- supported ops ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, Trans ta = Trans::No, Trans tb = Trans::No);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
// x[rows x n] + bias[n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& bias);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
// Row-wise RMS normalization with a learned per-column gain.
Tensor rmsnorm(const Tensor& x, const Tensor& gain, float eps = 1e-5f);
// Gathers table rows; result is ids.size() x table.cols().
Tensor embedding(const Tensor& table, std::span<const int> ids);
// Mean token negative log-likelihood over rows whose target is >= 0.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- structural ops ---------------------------------------------------------

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor reshape(const Tensor& x, Shape shape);

struct RopeTable {
  std::size_t head_dim = 0;
  std::size_t max_positions = 0;
  std::vector<float> cos;  // max_positions x head_dim/2
  std::vector<float> sin;
  static RopeTable build(std::size_t head_dim, std::size_t max_positions, double base = 10000.0);
};

// Rotary position encoding applied per head to x[T x n_heads*head_dim];
// row t is rotated by position first_position + t.
Tensor rope(const Tensor& x, std::size_t n_heads, const RopeTable& table, std::size_t first_position = 0);

// Multi-head causal self-attention core: softmax(QK^T/sqrt(dh) + mask) V per
// head, heads packed along columns. Row t only reads key/value rows <= t.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads);

// ---- optimizer ---------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; 0 gives plain Adam
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
};

AdamState make_adam(const AdamConfig& config, std::span<const Tensor> leaves);

// Moves each leaf opposite to its bias-corrected moment ratio using the
// gradient currently held by the leaf, then advances the step counter.
void adam_update(AdamState& state, std::span<Tensor> leaves);

// Same update with explicit gradients (one span per leaf).
void adam_update(AdamState& state, std::span<Tensor> leaves, std::span<const std::span<const float>> grads);

// Rescales leaf gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> leaves, double max_norm);

// ---- oracle ----------------------------------------------------------------

// Central-difference gradient of f with respect to every entry of the leaf x.
// The denominator uses the perturbation actually representable in float.
std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor& x, double h);

// ||a - b||_2 / max(||a||_2, ||b||_2, floor)
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

}  // namespace ccot::ad
