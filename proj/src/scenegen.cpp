#include "litsearch/scenegen.hpp"

#include "litsearch/errors.hpp"
#include "litsearch/random.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>
#include <sstream>

namespace litsearch {

namespace {

constexpr double kLeak = 0.2;
constexpr double kMaxPolar = 1.3;  // radians; keeps the light above the horizon

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) { return seeded_stream(seed, tag); }

Eigen::MatrixXd gaussian(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

// Haar-random matrix with orthonormal columns (rows >= cols) or rows.
Eigen::MatrixXd orthogonal(Index rows, Index cols, std::mt19937_64& rng) {
  const Index big = std::max(rows, cols), small = std::min(rows, cols);
  const Eigen::MatrixXd g = gaussian(big, small, 1.0, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Index k = 0; k < small; ++k)
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  return rows >= cols ? q : Eigen::MatrixXd(q.transpose());
}

Eigen::MatrixXd unit_rows(Index rows, Index cols, std::mt19937_64& rng) {
  Eigen::MatrixXd m = gaussian(rows, cols, 1.0, rng);
  m.rowwise().normalize();
  return m;
}

Eigen::MatrixXd nearest_upsample(Index out, Index in) {
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(out, in);
  for (Index i = 0; i < out; ++i) u(i, i * in / out) = 1.0;
  return u;
}

void validate(const GeneratorConfig& c) {
  auto positive = [](Index v, const char* field) {
    if (v < 1) throw ConfigError(std::string("generator.") + field, "must be >= 1");
  };
  positive(c.latent_dim, "latent_dim");
  positive(c.style_dim, "style_dim");
  positive(c.layers, "layers");
  positive(c.resolution, "resolution");
  positive(c.albedo_patches, "albedo_patches");
  positive(c.height_basis, "height_basis");
  positive(c.mapping_hidden, "mapping_hidden");
  if (c.resolution % c.albedo_patches != 0)
    throw ConfigError("generator.resolution", "must be a multiple of albedo_patches");
  if (!(c.gloss_exponent >= 1.0)) throw ConfigError("generator.gloss_exponent", "must be >= 1");
  if (!(c.cavity >= 0.0 && c.cavity < 1.0)) throw ConfigError("generator.cavity", "must lie in [0, 1)");
  if (!(c.relief >= 0.0)) throw ConfigError("generator.relief", "must be >= 0");
  if (c.persistent_rows() + GeneratorConfig::kLightingRows >= c.code_size())
    throw ConfigError("generator", "persistent and lighting rows must total fewer than layers * style_dim");
  if (c.code_size() - c.persistent_rows() < 4)
    throw ConfigError("generator", "null space of the persistent mixing must have dimension >= 4");
}

}  // namespace

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"latent_dim", c.latent_dim},
                     {"style_dim", c.style_dim},
                     {"layers", c.layers},
                     {"resolution", c.resolution},
                     {"albedo_patches", c.albedo_patches},
                     {"height_basis", c.height_basis},
                     {"gloss_exponent", c.gloss_exponent},
                     {"mapping_hidden", c.mapping_hidden},
                     {"relief", c.relief},
                     {"cavity", c.cavity}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  GeneratorConfig d;
  c.seed = j.value("seed", d.seed);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.style_dim = j.value("style_dim", d.style_dim);
  c.layers = j.value("layers", d.layers);
  c.resolution = j.value("resolution", d.resolution);
  c.albedo_patches = j.value("albedo_patches", d.albedo_patches);
  c.height_basis = j.value("height_basis", d.height_basis);
  c.gloss_exponent = j.value("gloss_exponent", d.gloss_exponent);
  c.mapping_hidden = j.value("mapping_hidden", d.mapping_hidden);
  c.relief = j.value("relief", d.relief);
  c.cavity = j.value("cavity", d.cavity);
}

Generator::Generator(GeneratorConfig config) : config_(config) {
  validate(config_);
  const GeneratorConfig& c = config_;
  const Index n = c.code_size();

  auto mix_rng = stream(c.seed, 1);
  persistent_ = unit_rows(c.persistent_rows(), n, mix_rng);
  lighting_ = unit_rows(GeneratorConfig::kLightingRows, n, mix_rng);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(persistent_);
  const Eigen::VectorXd sv = svd.singularValues();
  if (sv.minCoeff() < 1e-8 * sv.maxCoeff()) throw Error("generator: persistent mixing is rank deficient");

  // Orthogonal layers keep the mapping's Jacobian condition number below
  // (1 / kLeak)^2, and square layers make it a bijection.
  auto map_rng = stream(c.seed, 2);
  const double gain = std::sqrt(2.0 / (1.0 + kLeak * kLeak));
  mapping_.w1 = gain * orthogonal(c.mapping_hidden, c.latent_dim, map_rng);
  mapping_.b1 = gaussian(c.mapping_hidden, 1, 0.1, map_rng);
  mapping_.w2 = gain * orthogonal(c.mapping_hidden, c.mapping_hidden, map_rng);
  mapping_.b2 = gaussian(c.mapping_hidden, 1, 0.1, map_rng);
  mapping_.w3 = orthogonal(c.style_dim, c.mapping_hidden, map_rng);
  mapping_.b3 = gaussian(c.style_dim, 1, 0.1, map_rng);

  // Albedo upsampling: colours [3K, K] -> rows (3H x 3K) * colours * cols (K x W).
  const Index H = c.resolution, K = c.albedo_patches;
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(3 * H, 3 * K);
  const Eigen::MatrixXd up = nearest_upsample(H, K);
  for (Index ch = 0; ch < 3; ++ch) rows.block(ch * H, ch * K, H, K) = up;
  basis_.upsample_rows = Tensor::from_matrix(rows);
  basis_.upsample_cols = Tensor::from_matrix(up.transpose());

  // Heightfield: plane waves with low integer frequencies and random phase.
  auto height_rng = stream(c.seed, 3);
  std::uniform_int_distribution<int> freq(-2, 2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const Index B = c.height_basis;
  Eigen::MatrixXd h(B, H * H), hx(B, H * H), hy(B, H * H);
  for (Index b = 0; b < B; ++b) {
    int fx = 0, fy = 0;
    while (fx == 0 && fy == 0) {
      fx = freq(height_rng);
      fy = freq(height_rng);
    }
    const double ph = phase(height_rng);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < H; ++x) {
        const double u = (double(x) + 0.5) / double(H), v = (double(y) + 0.5) / double(H);
        const double arg = 2.0 * std::numbers::pi * (fx * u + fy * v) + ph;
        h(b, y * H + x) = std::cos(arg);
        hx(b, y * H + x) = -c.relief * 2.0 * std::numbers::pi * fx * std::sin(arg);
        hy(b, y * H + x) = -c.relief * 2.0 * std::numbers::pi * fy * std::sin(arg);
      }
  }
  basis_.height = Tensor::from_matrix(h);
  basis_.height_dx = Tensor::from_matrix(hx);
  basis_.height_dy = Tensor::from_matrix(hy);
}

LatentZ Generator::sample_latent(std::mt19937_64& rng) const {
  std::normal_distribution<double> n(0.0, 1.0);
  LatentZ z(config_.latent_dim);
  for (Index i = 0; i < z.size(); ++i) z[i] = n(rng);
  return z;
}

StyleCode map_latent(const LatentZ& z, const Generator& gen) {
  const GeneratorConfig& c = gen.config();
  if (z.size() != c.latent_dim) {
    std::ostringstream os;
    os << "map_latent: latent has " << z.size() << " entries, expected " << c.latent_dim;
    throw ShapeError(os.str());
  }
  const auto& m = gen.mapping();
  auto leaky = [](Eigen::VectorXd v) {
    for (Index i = 0; i < v.size(); ++i)
      if (!(v[i] > 0.0)) v[i] *= kLeak;
    return v;
  };
  const Eigen::VectorXd h1 = leaky(m.w1 * z + m.b1);
  const Eigen::VectorXd h2 = leaky(m.w2 * h1 + m.b2);
  const Eigen::VectorXd w = m.w3 * h2 + m.b3;
  StyleCode code(c.layers, c.style_dim);
  code.rowwise() = w.transpose();
  return code;
}

Eigen::MatrixXd mapping_jacobian(const LatentZ& z, const Generator& gen) {
  const GeneratorConfig& c = gen.config();
  if (z.size() != c.latent_dim) throw ShapeError("mapping_jacobian: latent has wrong length");
  const auto& m = gen.mapping();
  auto slope = [](const Eigen::VectorXd& pre) {
    return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeak; });
  };
  const Eigen::VectorXd p1 = m.w1 * z + m.b1;
  const Eigen::VectorXd h1 = p1.unaryExpr([](double v) { return v > 0.0 ? v : kLeak * v; });
  const Eigen::VectorXd p2 = m.w2 * h1 + m.b2;
  return m.w3 * slope(p2).asDiagonal() * m.w2 * slope(p1).asDiagonal() * m.w1;
}

Tensor map_latent_tensor(const Tensor& z, const Generator& gen) {
  const GeneratorConfig& c = gen.config();
  if (z.numel() != c.latent_dim) throw ShapeError("map_latent_tensor: latent shape " + to_string(z.shape()));
  const auto& m = gen.mapping();
  auto col = [](const Eigen::VectorXd& v) { return Tensor::from_matrix(v); };
  Tensor x = reshape(z, {c.latent_dim, 1});
  x = leaky_relu(matmul(Tensor::from_matrix(m.w1), x) + col(m.b1), kLeak);
  x = leaky_relu(matmul(Tensor::from_matrix(m.w2), x) + col(m.b2), kLeak);
  x = matmul(Tensor::from_matrix(m.w3), x) + col(m.b3);
  return reshape(x, {c.style_dim});
}

Tensor to_tensor(const StyleCode& code) {
  return Tensor::constant({code.rows(), code.cols()}, Eigen::Map<const Eigen::ArrayXd>(code.data(), code.size()));
}

SceneParams scene_params(const Tensor& w_plus, const Generator& gen) {
  const GeneratorConfig& c = gen.config();
  if (w_plus.shape() != Shape{c.layers, c.style_dim}) {
    std::ostringstream os;
    os << "synthesize: style code shape " << to_string(w_plus.shape()) << ", expected "
       << to_string({c.layers, c.style_dim});
    throw ShapeError(os.str());
  }
  const Index K = c.albedo_patches, B = c.height_basis, colours = 3 * K * K;
  Tensor flat = reshape(w_plus, {c.code_size(), 1});
  Tensor p = matmul(Tensor::from_matrix(gen.persistent_mixing()), flat);
  Tensor q = matmul(Tensor::from_matrix(gen.lighting_mixing()), flat);

  SceneParams out;
  out.albedo = reshape(sigmoid(slice(p, 0, colours)), {3, K, K});
  out.height_weights = reshape(2.0 * sigmoid(slice(p, colours, B)) - 1.0, {1, B});
  Tensor sq = sigmoid(q);
  out.theta = reshape(kMaxPolar * slice(sq, 0, 1), {});
  out.phi = reshape(2.0 * std::numbers::pi * slice(sq, 1, 1), {});
  out.diffuse = reshape(1.5 * slice(sq, 2, 1), {});
  out.ambient = reshape(0.05 + 0.45 * slice(sq, 3, 1), {});
  out.gloss = reshape(0.5 * slice(sq, 4, 1), {});
  return out;
}

SceneImage render(const SceneParams& params, const Generator& gen) {
  const GeneratorConfig& c = gen.config();
  const Index H = c.resolution, K = c.albedo_patches;
  const auto& basis = gen.basis();

  Tensor colours = reshape(params.albedo, {3 * K, K});
  Tensor base = reshape(matmul(basis.upsample_rows, matmul(colours, basis.upsample_cols)), {3, H, H});

  Tensor height = matmul(params.height_weights, basis.height);
  Tensor hx = matmul(params.height_weights, basis.height_dx);
  Tensor hy = matmul(params.height_weights, basis.height_dy);

  Tensor albedo = base;
  if (c.cavity > 0.0) {
    Tensor grade = reshape(1.0 - c.cavity * sigmoid(-height), {1, H, H});
    albedo = base * concat({grade, grade, grade});
  }

  // Normal n = (-hx, -hy, 1) / |.|, view v = (0, 0, 1).
  Tensor inv_len = pow(1.0 + square(hx) + square(hy), -0.5);
  Tensor sin_t = sin(params.theta);
  Tensor lx = sin_t * cos(params.phi);
  Tensor ly = sin_t * sin(params.phi);
  Tensor lz = cos(params.theta);
  Tensor n_dot_l = (lz - hx * lx - hy * ly) * inv_len;
  Tensor shading = reshape(params.ambient + params.diffuse * relu(n_dot_l), {1, H, H});
  Tensor r_dot_v = 2.0 * n_dot_l * inv_len - lz;
  Tensor spec = reshape(params.gloss * pow(relu(r_dot_v), c.gloss_exponent), {1, H, H});
  Tensor gloss = concat({spec, spec, spec});

  Tensor composite = albedo * concat({shading, shading, shading}) + gloss;
  SceneImage img;
  img.pixels = clamp(composite, 0.0, 1.0);
  img.ground_truth = GroundTruth{albedo, shading, gloss, composite, reshape(height, {1, H, H}), params};
  return img;
}

SceneImage synthesize(const Tensor& w_plus, const Generator& gen) { return render(scene_params(w_plus, gen), gen); }

SceneImage synthesize(const StyleCode& w_plus, const Generator& gen) { return synthesize(to_tensor(w_plus), gen); }

Eigen::MatrixXd lighting_null_basis(const Generator& gen) {
  const Eigen::MatrixXd& wp = gen.persistent_mixing();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(wp, Eigen::ComputeFullV);
  const Index rank = wp.rows();
  return svd.matrixV().rightCols(wp.cols() - rank);
}

}  // namespace litsearch
