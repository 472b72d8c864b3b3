#pragma once

#include "litsearch/decomp.hpp"
#include "litsearch/percept.hpp"
#include "litsearch/scenegen.hpp"
#include "litsearch/tensor.hpp"

#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace litsearch {

/// Relight keeps albedo and diversifies shading/gloss; Recolor swaps the roles.
enum class EditMode { Relight, Recolor };

/// Penalty: +cosine (similarity is penalised). Printed: -cosine.
enum class DecoSign { Penalty, Printed };

std::string to_string(EditMode mode);
EditMode parse_edit_mode(const std::string& s);

struct LossWeights {
  double consistency = 300.0;
  double perceptual = 30.0;
  double diversity = 0.1;
  double distinction = 0.5;
  double decorrelation = 0.02;
  double huber_delta = 0.1;
  EditMode mode = EditMode::Relight;
  DecoSign deco_sign = DecoSign::Penalty;

  /// Weights actually applied: Recolor forces decorrelation to 0 (with a warning).
  LossWeights effective() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

struct LossReport {
  double consistency = 0.0;
  double perceptual = 0.0;
  double diversity = 0.0;
  double distinction = 0.0;
  double decorrelation = 0.0;
  double total = 0.0;
};

/// Mean elementwise Huber loss between two same-shaped maps.
Tensor const_loss(const Tensor& original, const Tensor& edited, double delta);

/// Sum over levels of the RMS feature distance.
Tensor perceptual_loss(const Tensor& original, const Tensor& edited, const FeaturePyramid& pyramid,
                       const std::set<Index>& levels);
/// Same, with the original's features precomputed (ascending level order).
Tensor perceptual_loss(std::span<const Tensor> original_features, const Tensor& edited, const FeaturePyramid& pyramid,
                       const std::set<Index>& levels);

struct DiversityOptions {
  double jitter = 1e-6;
  double max_loss = 1e4;
};

/// -log det(N + jitter I) with N_ij = t_i . t_j. A numerically singular N
/// yields the constant `max_loss` (logged).
Tensor diversity_loss(std::span<const Tensor> transients, const DiversityOptions& options = {});

/// Softmax cross-entropy against `true_index`, log-probabilities clamped at -30.
Tensor distinction_loss(const Tensor& logits, Index true_index);

/// Signed cosine between the lightness maps of the albedo and the relit image.
Tensor decorrelation_loss(const Tensor& albedo, const Tensor& relit, double sigma,
                          DecoSign sign = DecoSign::Penalty);

struct LossSettings {
  double transient_sigma = 4.0;
  Index transient_res = 8;
  double lightness_sigma = 16.0;
  std::set<Index> perceptual_levels{1, 2};
  DiversityOptions diversity;
  std::uint64_t feature_seed = 1234;

  /// Defaults scaled to a given image resolution.
  static LossSettings for_resolution(Index resolution);
};

void to_json(nlohmann::json& j, const LossSettings& s);
void from_json(const nlohmann::json& j, LossSettings& s);

/// Settings plus the fixed feature extractors they imply.
class LossContext {
 public:
  explicit LossContext(LossSettings settings);

  const LossSettings& settings() const { return settings_; }
  /// Extractor for persistent maps in the given mode (3 channels for albedo,
  /// 4 for stacked shading + gloss).
  const FeaturePyramid& pyramid(EditMode mode) const;

  /// Persistent map for the mode.
  Tensor persistent(const DecompositionTriple& parts, EditMode mode) const;
  /// Unit vector of the transient map for the mode.
  Tensor transient(const DecompositionTriple& parts, EditMode mode) const;

 private:
  LossSettings settings_;
  std::shared_ptr<FeaturePyramid> rgb_;
  std::shared_ptr<FeaturePyramid> stack_;
};

struct EditTerm {
  Index direction = 0;
  SceneImage edited;
  DecompositionTriple parts;
  Tensor logits;
};

struct LossBatch {
  SceneImage original;
  DecompositionTriple original_parts;
  std::vector<EditTerm> edits;
};

struct LossTerms {
  Tensor consistency, perceptual, diversity, distinction, decorrelation, total;
  LossWeights weights;  // effective weights used
  LossReport report() const;
};

/// Weighted combination of all five terms for one original and its edits.
/// Per-edit terms are averaged; diversity needs at least two edits.
LossTerms total_loss(const LossBatch& batch, const LossWeights& weights, const LossContext& context);

}  // namespace litsearch
