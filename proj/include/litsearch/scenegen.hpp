#pragma once

// Seeded toy generator: a mapping MLP z -> w broadcast into a per-layer style
// stack, and a differentiable renderer whose persistent parameters (albedo
// patches, heightfield) and lighting parameters are random linear mixtures of
// the flattened style stack.

#include "litsearch/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <optional>
#include <random>

#include "json.hpp"

namespace litsearch {

template <typename Scalar>
using StyleCodeT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Per-layer style stack w+ (layers x style_dim).
using StyleCode = StyleCodeT<double>;

template <typename Scalar>
using LatentT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using LatentZ = LatentT<double>;

struct GeneratorConfig {
  std::uint64_t seed = 7;
  Index latent_dim = 32;      // Dz
  Index style_dim = 32;       // D
  Index layers = 4;           // L
  Index resolution = 64;      // H = W
  Index albedo_patches = 4;   // K, giving a K x K grid
  Index height_basis = 8;
  double gloss_exponent = 16.0;
  Index mapping_hidden = 32;
  double relief = 0.15;       // slope scale of the heightfield
  double cavity = 0.35;       // albedo darkening in low regions, 0 disables

  Index code_size() const { return layers * style_dim; }
  Index persistent_rows() const { return 3 * albedo_patches * albedo_patches + height_basis; }
  static constexpr Index kLightingRows = 5;  // theta, phi, diffuse, ambient, gloss
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

/// Renderer inputs, already squashed into their physical ranges.
struct SceneParams {
  Tensor albedo;          // [3, K, K] in (0, 1)
  Tensor height_weights;  // [1, B] in (-1, 1)
  Tensor theta;           // polar angle of the light
  Tensor phi;             // azimuth
  Tensor diffuse;         // k_d in [0, 1.5]
  Tensor ambient;         // k_a in [0.05, 0.5]
  Tensor gloss;           // k_g in [0, 0.5]
};

struct GroundTruth {
  Tensor albedo;     // [3, H, W]
  Tensor shading;    // [1, H, W]
  Tensor gloss;      // [3, H, W]
  Tensor composite;  // A * S + G before clamping
  Tensor height;     // [1, H, W]
  SceneParams params;
};

struct SceneImage {
  Tensor pixels;  // [3, H, W] in [0, 1]
  std::optional<GroundTruth> ground_truth;

  Index height() const { return pixels.dim(1); }
  Index width() const { return pixels.dim(2); }
};

class Generator {
 public:
  explicit Generator(GeneratorConfig config);

  const GeneratorConfig& config() const { return config_; }
  /// W_P: persistent parameters from vec(w+), unit-norm rows.
  const Eigen::MatrixXd& persistent_mixing() const { return persistent_; }
  /// W_Q: lighting parameters from vec(w+), unit-norm rows.
  const Eigen::MatrixXd& lighting_mixing() const { return lighting_; }

  LatentZ sample_latent(std::mt19937_64& rng) const;

  struct MappingWeights {
    Eigen::MatrixXd w1, w2, w3;
    Eigen::VectorXd b1, b2, b3;
  };
  const MappingWeights& mapping() const { return mapping_; }

  // Constant render inputs shared by every scene.
  struct RenderBasis {
    Tensor upsample_rows;  // [3H, 3K], block-diagonal nearest-neighbour
    Tensor upsample_cols;  // [K, W]
    Tensor height;         // [B, H*W]
    Tensor height_dx;      // [B, H*W], already scaled by relief
    Tensor height_dy;
  };
  const RenderBasis& basis() const { return basis_; }

 private:
  GeneratorConfig config_;
  Eigen::MatrixXd persistent_;
  Eigen::MatrixXd lighting_;
  MappingWeights mapping_;
  RenderBasis basis_;
};

/// w = MLP(z), broadcast to every layer.
StyleCode map_latent(const LatentZ& z, const Generator& gen);
/// d w / d z of the mapping MLP at z (style_dim x latent_dim).
Eigen::MatrixXd mapping_jacobian(const LatentZ& z, const Generator& gen);
/// Differentiable mapping of a [Dz] tensor to a single [D] style vector.
Tensor map_latent_tensor(const Tensor& z, const Generator& gen);

/// Squashed renderer inputs for a [L, D] style stack.
SceneParams scene_params(const Tensor& w_plus, const Generator& gen);

/// Renders albedo * shading + gloss with attached ground truth.
SceneImage render(const SceneParams& params, const Generator& gen);

SceneImage synthesize(const Tensor& w_plus, const Generator& gen);
SceneImage synthesize(const StyleCode& w_plus, const Generator& gen);

/// Orthonormal columns spanning null(W_P): pure-lighting edits.
Eigen::MatrixXd lighting_null_basis(const Generator& gen);

Tensor to_tensor(const StyleCode& code);

}  // namespace litsearch
