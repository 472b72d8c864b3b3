#pragma once

#include "litsearch/tensor.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace litsearch {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::vector<Eigen::ArrayXd> first_moment;
  std::vector<Eigen::ArrayXd> second_moment;
  long step = 0;

  /// Zeroed moments matching the given parameter sizes.
  static AdamState init(std::span<const Eigen::ArrayXd> params, AdamOptions options);
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(std::span<Eigen::ArrayXd> params, std::span<const Eigen::ArrayXd> grads, AdamState& state);

/// Adam over a fixed list of parameter tensors, reading their gradients.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void step();
  void zero_grad();
  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

}  // namespace litsearch
