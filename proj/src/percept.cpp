#include "litsearch/percept.hpp"

#include "litsearch/errors.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace litsearch {

namespace {

constexpr double kFeatureLeak = 0.2;

std::shared_ptr<const ConvKernel> gaussian_kernel(double sigma, bool vertical) {
  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(3.0 * sigma)));
  auto k = std::make_shared<ConvKernel>();
  k->height = vertical ? 2 * radius + 1 : 1;
  k->width = vertical ? 1 : 2 * radius + 1;
  k->weights.resize(2 * radius + 1);
  for (Index i = -radius; i <= radius; ++i) k->weights[i + radius] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
  k->weights /= k->weights.sum();
  return k;
}

}  // namespace

Tensor gaussian_blur(const Tensor& x, double sigma) {
  if (sigma <= 0.0) return x;
  Conv2dOptions opts{1, Padding::Edge, true};
  return conv2d_fixed(conv2d_fixed(x, gaussian_kernel(sigma, true), opts), gaussian_kernel(sigma, false), opts);
}

Tensor pool_to(const Tensor& x, Index out_res) {
  if (x.rank() != 3 || out_res < 1) throw ShapeError("pool_to expects [C, H, W], got " + to_string(x.shape()));
  Tensor y = x;
  while (y.dim(1) > out_res) {
    if (y.dim(1) % 2 != 0) break;
    y = downsample2x(y);
  }
  if (y.dim(1) != out_res || y.dim(2) != out_res) {
    std::ostringstream os;
    os << "pool_to: cannot pool " << to_string(x.shape()) << " to " << out_res << "x" << out_res;
    throw ShapeError(os.str());
  }
  return y;
}

Tensor channel_mean(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("channel_mean expects [C, H, W], got " + to_string(x.shape()));
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor weights = Tensor::full({1, C}, 1.0 / double(C));
  return reshape(matmul(weights, reshape(x, {C, H * W})), {1, H, W});
}

Tensor repeat_channels(const Tensor& x, Index channels) {
  std::vector<Tensor> parts(static_cast<std::size_t>(channels), x);
  return concat(parts, 0);
}

FeaturePyramid::FeaturePyramid(std::uint64_t seed, Index in_channels, Index max_levels) : in_channels_(in_channels) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(in_channels), 0x51ed270bu};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  Index cin = in_channels;
  for (Index level = 1; level <= max_levels; ++level) {
    auto k = std::make_shared<ConvKernel>();
    k->out_channels = std::min<Index>(16 << level, 64);
    k->in_channels = cin;
    k->height = k->width = 3;
    const Index per = cin * 9;
    k->weights.resize(k->out_channels * per);
    for (Index o = 0; o < k->out_channels; ++o) {
      auto w = k->weights.segment(o * per, per);
      for (Index i = 0; i < per; ++i) w[i] = normal(rng);
      w /= std::sqrt(w.square().sum());
    }
    cin = k->out_channels;
    filters_.push_back(std::move(k));
  }
}

Index FeaturePyramid::channels(Index level) const {
  if (level == 0) return in_channels_;
  return filters_.at(static_cast<std::size_t>(level - 1))->out_channels;
}

std::vector<Tensor> FeaturePyramid::extract(const Tensor& img, const std::set<Index>& levels) const {
  if (img.rank() != 3 || img.dim(0) != in_channels_)
    throw ShapeError("FeaturePyramid::extract: input shape " + to_string(img.shape()) + " does not match " +
                     std::to_string(in_channels_) + " channels");
  std::vector<Tensor> out;
  if (levels.empty()) return out;
  const Index top = *levels.rbegin();
  const auto log2h = static_cast<Index>(std::floor(std::log2(double(std::min(img.dim(1), img.dim(2))))));
  if (*levels.begin() < 0 || top > log2h || top > max_levels()) {
    std::ostringstream os;
    os << "FeaturePyramid::extract: level " << top << " exceeds log2(H) = " << log2h << " or depth " << max_levels();
    throw IndexError(os.str());
  }
  Tensor x = img;
  for (Index level = 0; level <= top; ++level) {
    if (level > 0)
      x = leaky_relu(conv2d_fixed(x, filters_[static_cast<std::size_t>(level - 1)], {2, Padding::Zero, false}),
                     kFeatureLeak);
    if (levels.count(level)) out.push_back(x);
  }
  return out;
}

Tensor smoothed_unit_vector(const Tensor& stack, double sigma, Index out_res) {
  Tensor pooled = pool_to(gaussian_blur(stack, sigma), out_res);
  Tensor flat = reshape(pooled, {pooled.numel()});
  Tensor norm = l2_norm(flat);
  if (!(norm.item() > 1e-12)) throw ZeroTransient("transient stack has zero norm");
  return flat / norm;
}

Tensor transient_vector(const Tensor& shading, const Tensor& gloss, double sigma, Index out_res) {
  return smoothed_unit_vector(concat({shading, gloss}, 0), sigma, out_res);
}

Tensor lightness_map(const Tensor& img, double sigma) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("lightness_map expects [3, H, W], got " + to_string(img.shape()));
  return gaussian_blur(channel_mean(img), sigma);
}

}  // namespace litsearch
