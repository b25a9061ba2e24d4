#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a handle on a graph node. Operations on Vars record their parents
// and a backward closure whenever gradient recording is enabled and at least
// one input requires a gradient; otherwise they produce plain constants and
// keep no graph alive.

#include <functional>
#include <memory>
#include <vector>

#include "selgan/tensor.hpp"

namespace selgan {

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool on) noexcept;
};

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor<T>& grad_buffer() {
    if (grad.numel() != value.numel() || grad.shape() != value.shape()) {
      grad = Tensor<T>(value.shape());
    }
    return grad;
  }

  void accumulate(const Tensor<T>& g);
  void accumulate(Tensor<T>&& g);
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  /// Direct mutation of the stored value; only meaningful for leaves.
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.numel() == node_->value.numel() && node_->grad.numel(); }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::int64_t numel() const { return node_->value.numel(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  /// New constant holding a copy of this value.
  Var detach() const { return Var(node_->value, false); }

  /// Backpropagates from this scalar (single-element) node.
  void backward() const;
  /// Backpropagates with an explicit upstream gradient of the same shape.
  void backward(Tensor<T> upstream) const;

  /// Scalar read-out of a single-element value.
  T item() const;

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }
  bool same_node(const Var& other) const noexcept { return node_ == other.node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates an op result; records the graph only when grad mode is on and any
/// parent requires a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward);

namespace ops {

// Elementwise, same shape.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T offset);
/// `a * s` where s is a single-element variable.
template <typename T> Var<T> scale_by(const Var<T>& a, const Var<T>& s);
/// Weighted sum of single-element variables.
template <typename T> Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights);

template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope);
template <typename T> Var<T> abs(const Var<T>& a);
template <typename T> Var<T> log(const Var<T>& a);
/// Clamp with straight pass-through inside [lo, hi] and zero gradient outside.
template <typename T> Var<T> clamp(const Var<T>& a, T lo, T hi);

// Reductions.
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
/// [B,C,H,W] -> [B,1,H,W] mean over channels.
template <typename T> Var<T> mean_channels(const Var<T>& a);

// Shape manipulation on [B,C,...] tensors.
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(const Var<T>& a, std::int64_t begin, std::int64_t count);

// Dense layers on [B,C,H,W].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);
/// weight is [Cin, Cout, k, k]; output size (H-1)*stride - 2*pad + k.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride,
                        int pad);
/// Per-sample, per-channel normalisation without affine parameters.
template <typename T> Var<T> instance_norm(const Var<T>& x, T eps);
/// s x s average pooling followed by nearest-neighbour upsampling back to [H,W].
template <typename T> Var<T> pool_upsample(const Var<T>& x, int scale);

// Batched matrix algebra on [B,M,K].
/// X Xᵀ per batch item: [B,M,K] -> [B,M,M].
template <typename T> Var<T> gram(const Var<T>& x);
/// A X per batch item: [B,M,M] x [B,M,K] -> [B,M,K].
template <typename T> Var<T> bmm(const Var<T>& a, const Var<T>& x);
/// Softmax over the last dimension.
template <typename T> Var<T> softmax_lastdim(const Var<T>& x);
/// Softmax over dimension 1 of [B,N,H,W] (per pixel).
template <typename T> Var<T> softmax_channels(const Var<T>& x);

/// Σ_n att[:,n] ⊗ gen[:, 3n:3n+3]; gen [B,3N,H,W], att [B,N,H,W] -> [B,3,H,W].
template <typename T> Var<T> attention_select(const Var<T>& generations, const Var<T>& attention);

/// Mean binary cross-entropy of sigmoid(logits) against a constant label.
template <typename T> Var<T> bce_with_logits(const Var<T>& logits, T label);
/// mean(loss / u + log u), elementwise over equal shapes.
template <typename T> Var<T> uncertainty_weighted_mean(const Var<T>& loss_map, const Var<T>& u);
/// Anisotropic L1 total variation of [B,C,H,W], summed over channels and
/// divided by B*H*W.
template <typename T> Var<T> total_variation(const Var<T>& x);

}  // namespace ops
}  // namespace selgan
