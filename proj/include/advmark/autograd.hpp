#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "advmark/tensor.hpp"

namespace advmark {

template <class S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Adds g into grad, allocating on first use.
  template <class Expr>
  void accumulate(const Expr& g) {
    if (grad.empty()) grad = Tensor<S>(value.shape());
    grad.array() += g;
  }
};

/// Handle to a node of the reverse-mode graph. Ops whose inputs carry no
/// gradient do not record a backward closure, so forward-only evaluation
/// keeps no intermediates alive.
template <class S>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<S> value, bool requires_grad = false)
      : node_(std::make_shared<Node<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<S>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient after backward(); zeros if the node was not reached.
  Tensor<S> grad() const {
    return node_->grad.empty() ? Tensor<S>(shape()) : node_->grad;
  }
  const std::shared_ptr<Node<S>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  /// Scalar value of a 1-element tensor.
  S item() const;

  /// Same value, cut from the graph.
  Var detach() const { return Var(value(), false); }

 private:
  std::shared_ptr<Node<S>> node_;
};

template <class S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> inputs, std::function<void(Node<S>&)> backward);

/// Reverse sweep from a scalar root; accumulates into every reachable leaf.
template <class S>
void backward(const Var<S>& root);

// Elementwise arithmetic (same shapes unless noted).
template <class S> Var<S> operator+(const Var<S>& a, const Var<S>& b);
template <class S> Var<S> operator-(const Var<S>& a, const Var<S>& b);
template <class S> Var<S> operator*(const Var<S>& a, const Var<S>& b);
template <class S> Var<S> operator*(const Var<S>& a, S s);
template <class S> Var<S> operator*(S s, const Var<S>& a) { return a * s; }
template <class S> Var<S> operator+(const Var<S>& a, S s);
template <class S> Var<S> operator-(S s, const Var<S>& a);

/// a + constant tensor (no gradient to the constant).
template <class S> Var<S> add_const(const Var<S>& a, const Tensor<S>& c);
/// a * factors, where factors has shape (1,C,H,W) and broadcasts over N.
template <class S> Var<S> mul_broadcast(const Var<S>& a, const Tensor<S>& factors);

template <class S> Var<S> leaky_relu(const Var<S>& x, S slope);
template <class S> Var<S> tanh(const Var<S>& x);
template <class S> Var<S> sigmoid(const Var<S>& x);
template <class S> Var<S> abs(const Var<S>& x);
/// Clip to [lo,hi]; gradient passes only where the input was inside.
template <class S> Var<S> clamp(const Var<S>& x, S lo, S hi);
/// Forward rounds to nearest; backward is the identity (straight-through).
template <class S> Var<S> round_ste(const Var<S>& x);

/// 2-D convolution. weight shape (Cout,Cin,k,k), bias shape (1,Cout,1,1) or empty Var.
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad);

/// Fully connected over flattened samples. weight shape (Out,F,1,1), bias (1,Out,1,1).
template <class S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);

template <class S> Var<S> reshape(const Var<S>& x, Shape s);
template <class S> Var<S> upsample_nearest(const Var<S>& x, int factor);
template <class S> Var<S> concat_channels(const std::vector<Var<S>>& parts);
/// Samples [first, first+count).
template <class S> Var<S> slice_samples(const Var<S>& x, int first, int count);
/// Inverse of slice: joins along N.
template <class S> Var<S> concat_samples(const std::vector<Var<S>>& parts);

/// Per-pixel affine colour transform y_c = sum_k M(c,k) x_k + offset_c on 3-channel input.
template <class S>
Var<S> channel_mix(const Var<S>& x, const Eigen::Matrix<S, 3, 3>& m, const Eigen::Matrix<S, 3, 1>& offset);

/// Orthonormal 8x8 block DCT-II per channel (inverse=true applies DCT-III).
template <class S> Var<S> block_dct8(const Var<S>& x, bool inverse);

/// 1-D correlation with an odd kernel along rows (axis=3) or columns (axis=2), reflect padding.
template <class S> Var<S> conv1d_reflect(const Var<S>& x, const std::vector<S>& kernel, int axis);

/// Unit-normalises the channel vector at every pixel: x / sqrt(sum_c x^2 + eps).
template <class S> Var<S> channel_normalize(const Var<S>& x, S eps);

template <class S> Var<S> sum(const Var<S>& x);
template <class S> Var<S> mean(const Var<S>& x);
/// mean((a-b)^2) over all elements.
template <class S> Var<S> mse(const Var<S>& a, const Var<S>& b);
/// Per-sample mean((a-b)^2), shape (N,1,1,1).
template <class S> Var<S> mse_per_sample(const Var<S>& a, const Var<S>& b);

}  // namespace advmark
