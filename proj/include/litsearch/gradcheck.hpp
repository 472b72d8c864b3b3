#pragma once

#include "litsearch/tensor.hpp"

#include <functional>
#include <vector>

namespace litsearch {

struct GradcheckResult {
  double max_relative_error = 0.0;  // worst over all inputs
  std::vector<Eigen::ArrayXd> analytic;
  std::vector<Eigen::ArrayXd> numeric;
};

/// Compares backward() against central differences of `f` with step `h`.
/// `f` must rebuild its graph from the given inputs on every call.
/// The per-input error is ||analytic - numeric|| / max(||analytic||, ||numeric||),
/// taken as 0 when both norms are below 1e-12.
GradcheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          const std::vector<Eigen::ArrayXd>& inputs, double h = 1e-5);

}  // namespace litsearch
