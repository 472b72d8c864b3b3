#include "litsearch/decomp.hpp"

#include "litsearch/errors.hpp"
#include "litsearch/percept.hpp"

namespace litsearch {

DecompositionTriple oracle_decompose(const SceneImage& img) {
  if (!img.ground_truth) throw Error("oracle_decompose: image carries no ground truth");
  const GroundTruth& gt = *img.ground_truth;
  return {gt.albedo, gt.shading, gt.gloss};
}

DecompositionTriple retinex_decompose(const SceneImage& img, const RetinexOptions& options) {
  const Tensor& pixels = img.pixels;
  if (pixels.rank() != 3 || pixels.dim(0) != 3)
    throw ShapeError("retinex_decompose expects [3, H, W], got " + to_string(pixels.shape()));
  Tensor lum = channel_mean(pixels);
  Tensor high = relu(lum - gaussian_blur(lum, options.sigma));
  Tensor gloss_lum = relu(high - quantile(high, options.gloss_quantile));
  Tensor chroma = pixels / repeat_channels(clamp_min(lum, 1e-6), 3);
  Tensor gloss = repeat_channels(gloss_lum, 3) * chroma;
  Tensor shading = clamp_min(gaussian_blur(lum - gloss_lum, options.sigma), options.min_shading);
  Tensor albedo = clamp((pixels - gloss) / repeat_channels(shading, 3), 0.0, 1.0);
  return {albedo, shading, gloss};
}

std::unique_ptr<Decomposer> make_decomposer(const std::string& name, Index resolution) {
  if (name == "oracle") return std::make_unique<OracleDecomposer>();
  if (name == "retinex") return std::make_unique<RetinexDecomposer>(RetinexOptions{double(resolution) / 8.0});
  throw ConfigError("decomposer", "unknown decomposer '" + name + "' (expected oracle or retinex)");
}

}  // namespace litsearch
