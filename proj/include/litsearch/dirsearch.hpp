#pragma once

// Joint search for edit directions in w+ space and the classifier that must
// tell them apart, in one streaming pass over freshly generated scenes.

#include "litsearch/decomp.hpp"
#include "litsearch/errors.hpp"
#include "litsearch/losses.hpp"
#include "litsearch/scenegen.hpp"
#include "litsearch/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace litsearch {

struct TrainConfig {
  Index directions = 8;       // M
  Index n_samples = 512;      // stream length; each z is drawn once
  double lr_dirs = 0.01;
  double lr_classifier = 3e-3;
  LossWeights weights;
  std::uint64_t seed = 1;
  double max_norm = 3.0;
  Index dirs_per_step = 0;    // 0 selects min(M, 8)
  Index classifier_hidden = 128;
  Index classifier_res = 16;

  Index resolved_dirs_per_step() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// M directions in w+ space, one per row of `dirs` (length layers * style_dim).
struct DirectionSet {
  static constexpr int kVersion = 1;

  Eigen::MatrixXd dirs;
  EditMode mode = EditMode::Relight;
  Index layers = 0;
  Index style_dim = 0;
  std::uint64_t generator_seed = 0;
  nlohmann::json meta = nlohmann::json::object();

  Index size() const { return dirs.rows(); }
  /// Row i reshaped to layers x style_dim.
  StyleCode direction(Index i) const;
};

/// Throws ShapeError when the set does not fit the generator's w+ shape.
void check_compatible(const DirectionSet& set, const Generator& gen);

std::string dump_directions(const DirectionSet& set);
DirectionSet parse_directions(const std::string& text);
void save_directions(const std::filesystem::path& path, const DirectionSet& set);
DirectionSet load_directions(const std::filesystem::path& path);

/// w+ + scale * reshape(d_i).
StyleCode apply_direction(const StyleCode& w_plus, const DirectionSet& set, Index i, double scale = 1.0);

/// MLP over a downsampled (original, edited) pair: 2 * 3 * res^2 -> hidden -> M.
class Classifier {
 public:
  Classifier() = default;
  Classifier(Index directions, Index hidden, Index input_res, std::uint64_t seed);

  Index directions() const { return directions_; }
  Index input_res() const { return input_res_; }
  Index input_size() const { return 6 * input_res_ * input_res_; }

  std::vector<Tensor> parameters() const { return {w1_, b1_, w2_, b2_}; }

  nlohmann::json to_json() const;
  static Classifier from_json(const nlohmann::json& j);

 private:
  friend Tensor classify_pair(const Classifier&, const Tensor&, const Tensor&);
  Index directions_ = 0, hidden_ = 0, input_res_ = 0;
  Tensor w1_, b1_, w2_, b2_;
};

/// Logits of length M for an (original, edited) pixel pair of equal size.
Tensor classify_pair(const Classifier& classifier, const Tensor& original, const Tensor& edited);

void save_classifier(const std::filesystem::path& path, const Classifier& classifier);
Classifier load_classifier(const std::filesystem::path& path);

/// Unit-norm Gaussian rows; what training starts from.
DirectionSet initial_directions(const TrainConfig& cfg, const Generator& gen);

struct TrainResult {
  DirectionSet directions;
  Classifier classifier;
  std::vector<LossReport> log;
  Index samples_drawn = 0;
};

/// Raised on a non-finite loss; carries the step index.
struct TrainingError : Error {
  TrainingError(Index step, const std::string& message) : Error(message), step(step) {}
  Index step;
};

using ProgressFn = std::function<void(Index step, const LossReport& report)>;

TrainResult train_directions(const TrainConfig& cfg, const Generator& gen, const Decomposer& decomposer,
                             const LossContext& context, const ProgressFn& progress = {});

/// Stable FNV-1a hash of a JSON document's compact dump, as hex.
std::string config_hash(const nlohmann::json& j);

}  // namespace litsearch
