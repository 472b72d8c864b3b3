#pragma once

// Evaluation of frozen direction sets against the toy generator's ground
// truth: consistency, subspace alignment, transient diversity, distinction,
// decorrelation, distribution shift and mapping inversion.

#include "litsearch/dirsearch.hpp"
#include "litsearch/losses.hpp"
#include "litsearch/percept.hpp"
#include "litsearch/scenegen.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace litsearch {

/// `n` fresh style codes from an evaluation seed (never the training stream).
std::vector<StyleCode> sample_codes(const Generator& gen, Index n, std::uint64_t seed);

/// Directions with the same row norms as `like`, Gaussian orientation.
DirectionSet random_directions(const DirectionSet& like, std::uint64_t seed);

/// Per direction, mean |P(edited) - P(original)| of the oracle persistent map
/// for `mode` (albedo for Relight, stacked shading + gloss for Recolor).
Eigen::VectorXd consistency_error(const DirectionSet& set, const Generator& gen, std::span<const StyleCode> codes,
                                  EditMode mode);

/// Per direction ||W_P d|| / ||d||; throws on a zero direction.
Eigen::VectorXd subspace_alignment(const DirectionSet& set, const Generator& gen);

struct GramSpectrum {
  Eigen::VectorXd eigenvalues;  // ascending
  Eigen::MatrixXd mean_gram;    // unit diagonal; off-diagonals are mean cosines
  double max_abs_cosine = 0.0;  // largest |off-diagonal| of mean_gram
  Index n = 0;
};

/// Eigenvalues of the scene-averaged Gram of oracle transient vectors for `mode`.
GramSpectrum gram_spectrum(const DirectionSet& set, const Generator& gen, std::span<const StyleCode> codes,
                           const LossContext& context, EditMode mode);

/// Per direction fraction of scenes where argmax F(original, edited_i) = i.
Eigen::VectorXd distinction_accuracy(const DirectionSet& set, const Classifier& classifier, const Generator& gen,
                                     std::span<const StyleCode> codes);

/// Per direction mean cosine between lightness(A_original) and lightness(edited).
Eigen::VectorXd decorrelation_coeff(const DirectionSet& set, const Generator& gen, std::span<const StyleCode> codes,
                                    double sigma);

template <typename Scalar>
struct FeatureStatsT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> cov;
  Index n = 0;
};
using FeatureStats = FeatureStatsT<double>;

/// Global-average-pooled features of the given pyramid level, one row per image.
Eigen::MatrixXd pooled_features(std::span<const SceneImage> images, const FeaturePyramid& pyramid, Index level = 2);

/// Mean and unbiased covariance of the rows, symmetrised.
FeatureStats feature_stats(const Eigen::MatrixXd& features);

/// Square root of a symmetric PSD matrix; negative eigenvalues clip to 0.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> psd_sqrt(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& m) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Mat sym = (m + m.transpose()) / Scalar(2);
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  const auto roots = es.eigenvalues().array().max(Scalar(0)).sqrt().matrix();
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), using the symmetric form
/// Tr((S1^(1/2) S2 S1^(1/2))^(1/2)) for the cross term. Clipped at 0.
template <typename Scalar>
Scalar frechet_distance(const FeatureStatsT<Scalar>& a, const FeatureStatsT<Scalar>& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows())
    throw ShapeError("frechet_distance: feature dims " + std::to_string(a.mean.size()) + " and " +
                     std::to_string(b.mean.size()));
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Mat ra = psd_sqrt<Scalar>(a.cov);
  const Mat cross = psd_sqrt<Scalar>(Mat(ra * b.cov * ra));
  const Scalar d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - Scalar(2) * cross.trace();
  return std::max(d, Scalar(0));
}

struct ShiftReport {
  double vanilla = 0.0;  // vanilla B against vanilla A
  double relight = 0.0;
  std::optional<double> recolor;
  std::optional<double> both;
  Index n_per_set = 0;
};

/// Frechet distances of edited and unedited sets against vanilla set A. Edits
/// are applied to the vanilla-B codes, cycling through directions.
ShiftReport distribution_shift_report(const DirectionSet& relight, const DirectionSet* recolor, const Generator& gen,
                                      Index n_per_set, std::uint64_t seed, const FeaturePyramid& pyramid);

struct InversionOptions {
  Index restarts = 8;
  Index steps = 2000;
  double lr = 0.05;
  Index polish_steps = 50;  // Levenberg-Marquardt iterations after Adam; 0 disables
  std::uint64_t seed = 0;
};

struct InversionResult {
  LatentZ z;
  double residual = 0.0;  // RMS of broadcast(M(z)) - target
};

/// Best-of-restarts search for z with broadcast(M(z)) close to `target`: Adam
/// with cosine-decayed step size, then a Levenberg-Marquardt polish of the
/// same objective.
InversionResult invert_mapping(const StyleCode& target, const Generator& gen, const InversionOptions& options = {});

enum class PathKind { Scale, Pair };

struct InterpolationPath {
  PathKind kind = PathKind::Scale;
  Index i = 0;
  Index j = 0;  // Pair only
  Index n_steps = 9;
};

/// Scale: w + s d_i for s in linspace(-1, 1). Pair: w + ((1-a) d_i + a d_j)
/// for a in linspace(0, 1).
std::vector<SceneImage> interpolate(const DirectionSet& set, const InterpolationPath& path, const Generator& gen,
                                    const StyleCode& w_plus);

/// Flat metric table; direction -1 marks a summary row.
struct MetricRow {
  std::string metric;
  Index direction = -1;
  double value = 0.0;
  Index n = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  nlohmann::json seeds = nlohmann::json::object();
  nlohmann::json criteria = nlohmann::json::object();

  void add_per_direction(const std::string& metric, const Eigen::VectorXd& values, Index n);
  void add_summary(const std::string& metric, double value, Index n);
  /// Throws if absent.
  double summary(const std::string& metric) const;

  /// Header "metric,direction,value,n"; summary rows use direction "all".
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

struct EvalConfig {
  std::uint64_t seed = 2024;  // disjoint from any training stream by tag
  Index n_consistency = 100;
  Index n_gram = 100;
  Index n_distinction = 200;
  Index n_decorrelation = 100;
  Index n_shift = 256;
  Index n_inversion = 8;
  InversionOptions inversion;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct EvalInputs {
  const DirectionSet* relight = nullptr;     // required
  const Classifier* classifier = nullptr;    // for distinction
  const DirectionSet* recolor = nullptr;     // recolor-mode set
  const Classifier* recolor_classifier = nullptr;
  const DirectionSet* ablation = nullptr;    // relight set trained without decorrelation
};

/// Full battery. Criteria booleans are filled for the checks whose inputs are present.
MetricReport evaluate(const EvalInputs& inputs, const Generator& gen, const LossContext& context,
                      const EvalConfig& config);

inline double median(Eigen::VectorXd v) {
  if (v.size() == 0) throw Error("median of an empty set");
  std::sort(v.data(), v.data() + v.size());
  const Index h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace litsearch
