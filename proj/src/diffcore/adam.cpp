#include "litsearch/adam.hpp"

#include "litsearch/errors.hpp"

#include <cmath>
#include <sstream>

namespace litsearch {

AdamState AdamState::init(std::span<const Eigen::ArrayXd> params, AdamOptions options) {
  AdamState state;
  state.options = options;
  for (const auto& p : params) {
    state.first_moment.push_back(Eigen::ArrayXd::Zero(p.size()));
    state.second_moment.push_back(Eigen::ArrayXd::Zero(p.size()));
  }
  return state;
}

void adam_step(std::span<Eigen::ArrayXd> params, std::span<const Eigen::ArrayXd> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || params[i].size() != state.first_moment[i].size()) {
      std::ostringstream os;
      os << "adam_step: parameter " << i << " has size " << params[i].size() << ", gradient " << grads[i].size()
         << ", moments " << state.first_moment[i].size();
      throw ShapeError(os.str());
    }
  }
  const AdamOptions& o = state.options;
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::ArrayXd& m = state.first_moment[i];
    Eigen::ArrayXd& v = state.second_moment[i];
    m = o.beta1 * m + (1.0 - o.beta1) * grads[i];
    v = o.beta2 * v + (1.0 - o.beta2) * grads[i].square();
    params[i] -= o.lr * (m / c1) / ((v / c2).sqrt() + o.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)) {
  std::vector<Eigen::ArrayXd> values;
  for (const Tensor& p : params_) {
    if (!p.requires_grad()) throw Error("Adam: parameter does not require gradients");
    values.push_back(p.value());
  }
  state_ = AdamState::init(values, options);
}

void Adam::step() {
  std::vector<Eigen::ArrayXd> values, grads;
  values.reserve(params_.size());
  grads.reserve(params_.size());
  for (const Tensor& p : params_) {
    values.push_back(p.value());
    grads.push_back(p.grad());
  }
  adam_step(values, grads, state_);
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].mutable_value() = std::move(values[i]);
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace litsearch
