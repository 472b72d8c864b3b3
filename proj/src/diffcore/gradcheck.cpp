#include "litsearch/gradcheck.hpp"

#include <algorithm>

namespace litsearch {

namespace {

std::vector<Tensor> as_params(const std::vector<Eigen::ArrayXd>& values, const std::vector<Shape>& shapes) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < values.size(); ++i) out.push_back(Tensor::parameter(shapes[i], values[i]));
  return out;
}

}  // namespace

GradcheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          const std::vector<Eigen::ArrayXd>& inputs, double h) {
  std::vector<Shape> shapes;
  for (const auto& v : inputs) shapes.push_back({v.size()});

  // Shapes are taken from a probe call so `f` can reshape as it likes.
  GradcheckResult result;
  std::vector<Tensor> params = as_params(inputs, shapes);
  Tensor out = f(params);
  backward(out);
  for (const Tensor& p : params) result.analytic.push_back(p.grad());

  std::vector<Eigen::ArrayXd> probe = inputs;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    Eigen::ArrayXd numeric(probe[i].size());
    for (Index k = 0; k < probe[i].size(); ++k) {
      const double saved = probe[i][k];
      probe[i][k] = saved + h;
      const double up = f(as_params(probe, shapes)).item();
      probe[i][k] = saved - h;
      const double down = f(as_params(probe, shapes)).item();
      probe[i][k] = saved;
      numeric[k] = (up - down) / (2.0 * h);
    }
    const double na = result.analytic[i].matrix().norm();
    const double nn = numeric.matrix().norm();
    const double denom = std::max(na, nn);
    const double err = denom < 1e-12 ? 0.0 : (result.analytic[i] - numeric).matrix().norm() / denom;
    result.max_relative_error = std::max(result.max_relative_error, err);
    result.numeric.push_back(std::move(numeric));
  }
  return result;
}

}  // namespace litsearch
