#pragma once

#include "litsearch/scenegen.hpp"
#include "litsearch/tensor.hpp"

#include <memory>
#include <string>

namespace litsearch {

/// Intrinsic split of an image into albedo * shading + gloss.
struct DecompositionTriple {
  Tensor albedo;   // [3, H, W]
  Tensor shading;  // [1, H, W], > 0
  Tensor gloss;    // [3, H, W], >= 0
};

class Decomposer {
 public:
  virtual ~Decomposer() = default;
  virtual DecompositionTriple decompose(const SceneImage& img) const = 0;
  virtual std::string name() const = 0;
};

/// Returns the renderer's ground truth; evaluation-only shortcut.
DecompositionTriple oracle_decompose(const SceneImage& img);

struct RetinexOptions {
  double sigma = 8.0;           // blur scale for the shading estimate
  double gloss_quantile = 0.95;
  double min_shading = 0.02;
};

/// Image-only estimate. Gloss is the high-pass luminance above its quantile,
/// coloured by the pixel's chroma; shading is the blurred remainder; albedo is
/// the residual (pixels - G) / S, so A * S + G reproduces unclamped pixels.
DecompositionTriple retinex_decompose(const SceneImage& img, const RetinexOptions& options);

class OracleDecomposer final : public Decomposer {
 public:
  DecompositionTriple decompose(const SceneImage& img) const override { return oracle_decompose(img); }
  std::string name() const override { return "oracle"; }
};

class RetinexDecomposer final : public Decomposer {
 public:
  explicit RetinexDecomposer(RetinexOptions options) : options_(options) {}
  DecompositionTriple decompose(const SceneImage& img) const override { return retinex_decompose(img, options_); }
  std::string name() const override { return "retinex"; }
  const RetinexOptions& options() const { return options_; }

 private:
  RetinexOptions options_;
};

/// "oracle" or "retinex"; retinex uses sigma = resolution / 8.
std::unique_ptr<Decomposer> make_decomposer(const std::string& name, Index resolution);

}  // namespace litsearch
