#pragma once

// Minimal define-by-run reverse-mode autodiff over dense double tensors.
//
// A Tensor is a cheap handle to a graph node. Ops on tensors that require
// gradients record their inputs and a backward closure; ops on constants fold
// away and record nothing, so synthesizing a fixed image costs no graph.

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace litsearch {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace ad {

struct Node {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until backward reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // reads self.grad, accumulates into inputs
};

}  // namespace ad

class Tensor {
 public:
  Tensor();

  static Tensor constant(Shape shape, Eigen::ArrayXd values);
  static Tensor parameter(Shape shape, Eigen::ArrayXd values);
  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  /// Row-major matrix as a 2-D constant.
  static Tensor from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& m);

  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  Index numel() const { return node_->value.size(); }

  const Eigen::ArrayXd& value() const { return node_->value; }
  double item() const;
  double operator[](Index i) const { return node_->value[i]; }

  /// 2-D tensor viewed as a row-major Eigen matrix copy.
  Eigen::MatrixXd matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient buffer; zeros if backward never reached this tensor.
  Eigen::ArrayXd grad() const;
  void zero_grad() { node_->grad.resize(0); }

  /// Only leaves may be mutated (optimizer updates, projections).
  Eigen::ArrayXd& mutable_value();

  Tensor detach() const;

  const std::shared_ptr<ad::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<ad::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<ad::Node> node_;
};

/// Populates `grad` of every requires-grad leaf reachable from `root`.
/// Leaf gradients accumulate across calls until zero_grad().
void backward(const Tensor& root);

namespace detail {
/// Builds an op result; checks finiteness and wires the backward closure
/// only when some input requires gradients.
Tensor make_result(const char* op, Shape shape, Eigen::ArrayXd value,
                   std::vector<Tensor> inputs, std::function<void(ad::Node&)> backward_fn);
/// Adds `g` into `node.grad` when the node tracks gradients.
void accumulate(ad::Node& node, const Eigen::ArrayXd& g);
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Shapes must match exactly, except that a tensor with
// a single element broadcasts against any shape.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator/(const Tensor& a, double b) { return mul(a, Tensor::scalar(1.0 / b)); }
Tensor operator-(const Tensor& a);

// ---------------------------------------------------------------------------
// Elementwise nonlinearities.

Tensor leaky_relu(const Tensor& x, double alpha);
inline Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
/// x^p for x >= 0 (or integral p).
Tensor pow(const Tensor& x, double p);
Tensor clamp_min(const Tensor& x, double lo);
/// Pass-through gradient inside [lo, hi], zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);
/// Elementwise Huber: x^2/2 for |x| <= delta, delta (|x| - delta/2) otherwise.
Tensor huber(const Tensor& x, double delta);

// ---------------------------------------------------------------------------
// Reductions (all return rank-0 scalars).

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor l2_norm(const Tensor& x);
inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }
/// Linear-interpolated order statistic; gradient flows to the selected entries.
Tensor quantile(const Tensor& x, double q);

// ---------------------------------------------------------------------------
// Structural ops.

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis = 0);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis = 0);
/// Rows [start, start + length) along axis 0.
Tensor slice(const Tensor& x, Index start, Index length);
Tensor transpose(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Image ops on [C, H, W] tensors.

enum class Padding { Zero, Edge };

/// Constant convolution kernel, row-major [out, in, height, width].
struct ConvKernel {
  Index out_channels = 1;
  Index in_channels = 1;
  Index height = 1;
  Index width = 1;
  Eigen::ArrayXd weights;
};

struct Conv2dOptions {
  Index stride = 1;
  Padding padding = Padding::Zero;
  /// Each input channel is filtered independently; the kernel must have
  /// in_channels == 1 and out_channels either 1 (shared) or C.
  bool depthwise = false;
};

/// "Same" convolution with a constant kernel. Gradients reach the input only.
Tensor conv2d_fixed(const Tensor& input, std::shared_ptr<const ConvKernel> kernel,
                    Conv2dOptions options = {});

/// 2x2 average pooling; H and W must be even.
Tensor downsample2x(const Tensor& x);

// ---------------------------------------------------------------------------
// Dense linear algebra.

/// x - logsumexp(x) over all elements.
Tensor log_softmax(const Tensor& x);

/// log det N for symmetric positive definite N via Cholesky.
/// Throws DegenerateGram when the factorization fails.
Tensor logdet_psd(const Tensor& n);

}  // namespace litsearch
