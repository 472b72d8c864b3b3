#include "litsearch/tensor.hpp"

#include "litsearch/errors.hpp"

#include <sstream>
#include <unordered_set>

namespace litsearch {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<ad::Node> make_leaf(Shape shape, Eigen::ArrayXd values, bool requires_grad) {
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    std::ostringstream os;
    os << "tensor data length " << values.size() << " does not match shape " << to_string(shape);
    throw ShapeError(os.str());
  }
  auto node = std::make_shared<ad::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor::Tensor() : node_(make_leaf({}, Eigen::ArrayXd::Zero(1), false)) {}

Tensor Tensor::constant(Shape shape, Eigen::ArrayXd values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::parameter(Shape shape, Eigen::ArrayXd values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

Tensor Tensor::scalar(double value) {
  return constant({}, Eigen::ArrayXd::Constant(1, value));
}

Tensor Tensor::full(Shape shape, double value) {
  const Index n = litsearch::numel(shape);
  return constant(std::move(shape), Eigen::ArrayXd::Constant(n, value));
}

Tensor Tensor::from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  Eigen::ArrayXd flat = Eigen::Map<const Eigen::ArrayXd>(rm.data(), rm.size());
  return constant({m.rows(), m.cols()}, std::move(flat));
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

Eigen::MatrixXd Tensor::matrix() const {
  if (rank() != 2) throw ShapeError("matrix() on tensor of shape " + to_string(shape()));
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      node_->value.data(), dim(0), dim(1));
}

Eigen::ArrayXd Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Eigen::ArrayXd::Zero(numel());
}

Eigen::ArrayXd& Tensor::mutable_value() {
  if (node_->backward) throw Error("mutable_value() on non-leaf tensor produced by " + std::string(node_->op));
  return node_->value;
}

Tensor Tensor::detach() const { return constant(shape(), value()); }

namespace detail {

Tensor make_result(const char* op, Shape shape, Eigen::ArrayXd value, std::vector<Tensor> inputs,
                   std::function<void(ad::Node&)> backward_fn) {
  if (!value.allFinite()) throw NonFiniteError(std::string("non-finite output in op ") + op);
  auto node = std::make_shared<ad::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  for (const Tensor& t : inputs) node->requires_grad = node->requires_grad || t.requires_grad();
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void accumulate(ad::Node& node, const Eigen::ArrayXd& g) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

}  // namespace detail

void backward(const Tensor& root) {
  if (root.numel() != 1) throw ShapeError("backward() needs a scalar root, got shape " + to_string(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<ad::Node*> order;
  std::unordered_set<ad::Node*> visited;
  std::vector<std::pair<ad::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      ad::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (ad::Node* node : order) {
    if (node->backward) node->grad.resize(0);
  }
  detail::accumulate(*root.node(), Eigen::ArrayXd::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    ad::Node* node = *it;
    if (!node->backward || node->grad.size() == 0) continue;
    node->backward(*node);
    node->grad.resize(0);
  }
}

}  // namespace litsearch
