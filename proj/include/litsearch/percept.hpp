#pragma once

// Fixed (never trained) feature extractor and the smoothing pipelines used by
// the diversity and decorrelation terms.

#include "litsearch/tensor.hpp"

#include <cstdint>
#include <memory>
#include <set>
#include <vector>

namespace litsearch {

/// Separable Gaussian blur of a [C, H, W] tensor with edge padding.
/// Constant images are preserved exactly; sigma <= 0 is the identity.
Tensor gaussian_blur(const Tensor& x, double sigma);

/// Average-pools [C, H, W] down to [C, out, out]; H / out must be a power of two.
Tensor pool_to(const Tensor& x, Index out_res);

/// Channel mean of [C, H, W] as [1, H, W].
Tensor channel_mean(const Tensor& x);

/// Repeats a [1, H, W] map into [channels, H, W].
Tensor repeat_channels(const Tensor& x, Index channels);

/// Random-filter pyramid: level 0 is the input, level j is
/// leaky_relu(conv3x3 stride 2 (level j-1)) with seeded unit-norm filters.
class FeaturePyramid {
 public:
  FeaturePyramid(std::uint64_t seed, Index in_channels, Index max_levels = 4);

  Index in_channels() const { return in_channels_; }
  Index channels(Index level) const;
  Index max_levels() const { return static_cast<Index>(filters_.size()); }

  /// Feature maps for the requested levels, ascending.
  /// Throws if a level exceeds log2(H) or the pyramid depth.
  std::vector<Tensor> extract(const Tensor& img, const std::set<Index>& levels) const;

 private:
  Index in_channels_;
  std::vector<std::shared_ptr<const ConvKernel>> filters_;
};

/// Unit-norm vector from a stack: blur at sigma, pool to out_res, flatten,
/// normalise. Throws ZeroTransient for an all-zero stack.
Tensor smoothed_unit_vector(const Tensor& stack, double sigma, Index out_res);

/// t_i from shading [1, H, W] and gloss [C, H, W].
Tensor transient_vector(const Tensor& shading, const Tensor& gloss, double sigma, Index out_res);

/// Grey-level map: channel mean blurred at the long scale sigma.
Tensor lightness_map(const Tensor& img, double sigma);

}  // namespace litsearch
