#include "litsearch/losses.hpp"

#include "litsearch/errors.hpp"
#include "litsearch/log.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <sstream>

namespace litsearch {

std::string to_string(EditMode mode) { return mode == EditMode::Relight ? "relight" : "recolor"; }

EditMode parse_edit_mode(const std::string& s) {
  if (s == "relight") return EditMode::Relight;
  if (s == "recolor") return EditMode::Recolor;
  throw ConfigError("mode", "expected relight or recolor, got '" + s + "'");
}

LossWeights LossWeights::effective() const {
  LossWeights w = *this;
  if (w.mode == EditMode::Recolor && w.decorrelation != 0.0) {
    warn("decorrelation weight ignored in recolor mode");
    w.decorrelation = 0.0;
  }
  return w;
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"consistency", w.consistency},
                     {"perceptual", w.perceptual},
                     {"diversity", w.diversity},
                     {"distinction", w.distinction},
                     {"decorrelation", w.decorrelation},
                     {"huber_delta", w.huber_delta},
                     {"mode", to_string(w.mode)},
                     {"deco_sign", w.deco_sign == DecoSign::Penalty ? "penalty" : "printed"}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  const LossWeights d;
  w.consistency = j.value("consistency", d.consistency);
  w.perceptual = j.value("perceptual", d.perceptual);
  w.diversity = j.value("diversity", d.diversity);
  w.distinction = j.value("distinction", d.distinction);
  w.decorrelation = j.value("decorrelation", d.decorrelation);
  w.huber_delta = j.value("huber_delta", d.huber_delta);
  w.mode = parse_edit_mode(j.value("mode", std::string("relight")));
  const std::string sign = j.value("deco_sign", std::string("penalty"));
  if (sign == "penalty") {
    w.deco_sign = DecoSign::Penalty;
  } else if (sign == "printed") {
    w.deco_sign = DecoSign::Printed;
  } else {
    throw ConfigError("deco_sign", "expected penalty or printed, got '" + sign + "'");
  }
  for (auto [name, v] : {std::pair{"consistency", w.consistency}, {"perceptual", w.perceptual},
                         {"diversity", w.diversity}, {"distinction", w.distinction},
                         {"decorrelation", w.decorrelation}})
    if (!(v >= 0.0)) throw ConfigError(name, "loss weights must be nonnegative");
  if (!(w.huber_delta > 0.0)) throw ConfigError("huber_delta", "must be positive");
}

Tensor const_loss(const Tensor& original, const Tensor& edited, double delta) {
  if (original.shape() != edited.shape())
    throw ShapeError("const_loss: shape mismatch " + to_string(original.shape()) + " vs " + to_string(edited.shape()));
  return mean(huber(original - edited, delta));
}

Tensor perceptual_loss(const Tensor& original, const Tensor& edited, const FeaturePyramid& pyramid,
                       const std::set<Index>& levels) {
  if (original.shape() != edited.shape())
    throw ShapeError("perceptual_loss: shape mismatch " + to_string(original.shape()) + " vs " +
                     to_string(edited.shape()));
  const std::vector<Tensor> features = pyramid.extract(original, levels);
  return perceptual_loss(features, edited, pyramid, levels);
}

Tensor perceptual_loss(std::span<const Tensor> original_features, const Tensor& edited, const FeaturePyramid& pyramid,
                       const std::set<Index>& levels) {
  const std::vector<Tensor> ef = pyramid.extract(edited, levels);
  if (ef.size() != original_features.size()) throw ShapeError("perceptual_loss: feature level count mismatch");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < ef.size(); ++i) {
    if (ef[i].shape() != original_features[i].shape())
      throw ShapeError("perceptual_loss: shape mismatch " + to_string(original_features[i].shape()) + " vs " +
                       to_string(ef[i].shape()));
    total = total + l2_norm(original_features[i] - ef[i]) / std::sqrt(double(ef[i].numel()));
  }
  return total;
}

Tensor diversity_loss(std::span<const Tensor> transients, const DiversityOptions& options) {
  const auto m = static_cast<Index>(transients.size());
  if (m < 2) throw Error("diversity_loss needs at least two transient vectors");
  const Index n = transients[0].numel();
  std::vector<Tensor> rows;
  for (const Tensor& t : transients) {
    if (t.numel() != n) throw ShapeError("diversity_loss: transient vectors differ in length");
    if (std::abs(std::sqrt(t.value().square().sum()) - 1.0) > 1e-6)
      throw Error("diversity_loss: transient vectors must have unit norm");
    rows.push_back(reshape(t, {1, n}));
  }
  Tensor stack = concat(rows, 0);
  Tensor gram = matmul(stack, transpose(stack));

  // Rank test on the un-jittered Gram: relative Cholesky pivot.
  Eigen::MatrixXd raw = gram.matrix();
  Eigen::LLT<Eigen::MatrixXd> llt(raw);
  bool singular = llt.info() != Eigen::Success;
  if (!singular) {
    const Eigen::VectorXd pivots = llt.matrixL().toDenseMatrix().diagonal().array().square();
    singular = pivots.minCoeff() <= 1e-12 * raw.diagonal().maxCoeff();
  }
  if (singular) {
    warn("diversity_loss: singular Gram matrix, loss clamped");
    return Tensor::scalar(options.max_loss);
  }
  try {
    Tensor value = -logdet_psd(gram + Tensor::from_matrix(options.jitter * Eigen::MatrixXd::Identity(m, m)));
    if (value.item() > options.max_loss) {
      warn("diversity_loss: loss above maximum, clamped");
      return Tensor::scalar(options.max_loss);
    }
    return value;
  } catch (const DegenerateGram&) {
    warn("diversity_loss: Cholesky failed, loss clamped");
    return Tensor::scalar(options.max_loss);
  }
}

Tensor distinction_loss(const Tensor& logits, Index true_index) {
  if (true_index < 0 || true_index >= logits.numel()) {
    std::ostringstream os;
    os << "distinction_loss: index " << true_index << " out of range for " << logits.numel() << " logits";
    throw IndexError(os.str());
  }
  Tensor logp = clamp_min(log_softmax(reshape(logits, {logits.numel()})), -30.0);
  Eigen::ArrayXd onehot = Eigen::ArrayXd::Zero(logits.numel());
  onehot[true_index] = 1.0;
  return -dot(logp, Tensor::constant({logits.numel()}, onehot));
}

Tensor decorrelation_loss(const Tensor& albedo, const Tensor& relit, double sigma, DecoSign sign) {
  if (albedo.rank() != 3 || relit.rank() != 3 || albedo.dim(1) != relit.dim(1) || albedo.dim(2) != relit.dim(2))
    throw ShapeError("decorrelation_loss: spatial mismatch " + to_string(albedo.shape()) + " vs " +
                     to_string(relit.shape()));
  Tensor a = lightness_map(albedo, sigma);
  Tensor b = lightness_map(relit, sigma);
  Tensor na = l2_norm(a);
  Tensor nb = l2_norm(b);
  if (!(na.item() > 0.0) || !(nb.item() > 0.0)) throw Error("decorrelation_loss: zero-norm lightness map");
  Tensor cosine = dot(a, b) / (na * nb);
  return sign == DecoSign::Penalty ? cosine : -cosine;
}

LossSettings LossSettings::for_resolution(Index resolution) {
  LossSettings s;
  s.transient_sigma = double(resolution) / 16.0;
  s.lightness_sigma = double(resolution) / 4.0;
  s.transient_res = std::min<Index>(8, resolution);
  return s;
}

void to_json(nlohmann::json& j, const LossSettings& s) {
  j = nlohmann::json{{"transient_sigma", s.transient_sigma},
                     {"transient_res", s.transient_res},
                     {"lightness_sigma", s.lightness_sigma},
                     {"perceptual_levels", std::vector<Index>(s.perceptual_levels.begin(), s.perceptual_levels.end())},
                     {"gram_jitter", s.diversity.jitter},
                     {"diversity_max", s.diversity.max_loss},
                     {"feature_seed", s.feature_seed}};
}

void from_json(const nlohmann::json& j, LossSettings& s) {
  const LossSettings d = s;
  s.transient_sigma = j.value("transient_sigma", d.transient_sigma);
  s.transient_res = j.value("transient_res", d.transient_res);
  s.lightness_sigma = j.value("lightness_sigma", d.lightness_sigma);
  if (j.contains("perceptual_levels")) {
    const auto levels = j.at("perceptual_levels").get<std::vector<Index>>();
    s.perceptual_levels = std::set<Index>(levels.begin(), levels.end());
  }
  s.diversity.jitter = j.value("gram_jitter", d.diversity.jitter);
  s.diversity.max_loss = j.value("diversity_max", d.diversity.max_loss);
  s.feature_seed = j.value("feature_seed", d.feature_seed);
}

LossContext::LossContext(LossSettings settings)
    : settings_(std::move(settings)),
      rgb_(std::make_shared<FeaturePyramid>(settings_.feature_seed, 3)),
      stack_(std::make_shared<FeaturePyramid>(settings_.feature_seed, 4)) {}

const FeaturePyramid& LossContext::pyramid(EditMode mode) const {
  return mode == EditMode::Relight ? *rgb_ : *stack_;
}

Tensor LossContext::persistent(const DecompositionTriple& parts, EditMode mode) const {
  if (mode == EditMode::Relight) return parts.albedo;
  return concat({parts.shading, parts.gloss}, 0);
}

Tensor LossContext::transient(const DecompositionTriple& parts, EditMode mode) const {
  if (mode == EditMode::Relight)
    return transient_vector(parts.shading, parts.gloss, settings_.transient_sigma, settings_.transient_res);
  return smoothed_unit_vector(parts.albedo, settings_.transient_sigma, settings_.transient_res);
}

LossReport LossTerms::report() const {
  LossReport r;
  r.consistency = consistency.item();
  r.perceptual = perceptual.item();
  r.diversity = diversity.item();
  r.distinction = distinction.item();
  r.decorrelation = decorrelation.item();
  r.total = total.item();
  return r;
}

LossTerms total_loss(const LossBatch& batch, const LossWeights& weights, const LossContext& context) {
  if (batch.edits.empty()) throw Error("total_loss: batch has no edits");
  const LossWeights w = weights.effective();
  const LossSettings& s = context.settings();
  const EditMode mode = w.mode;
  const double per_edit = 1.0 / double(batch.edits.size());

  const Tensor persistent_o = context.persistent(batch.original_parts, mode);
  const std::vector<Tensor> features_o = context.pyramid(mode).extract(persistent_o, s.perceptual_levels);

  // Zero-weight terms are still reported but evaluated off the graph.
  auto live = [](const Tensor& x, double weight) { return weight != 0.0 ? x : x.detach(); };

  LossTerms t;
  t.weights = w;
  t.consistency = t.perceptual = t.distinction = t.decorrelation = t.diversity = Tensor::scalar(0.0);
  std::vector<Tensor> transients;
  for (const EditTerm& e : batch.edits) {
    const Tensor persistent_r = context.persistent(e.parts, mode);
    t.consistency = t.consistency + const_loss(persistent_o, live(persistent_r, w.consistency), w.huber_delta);
    t.perceptual = t.perceptual + perceptual_loss(features_o, live(persistent_r, w.perceptual), context.pyramid(mode),
                                                  s.perceptual_levels);
    t.distinction = t.distinction + distinction_loss(live(e.logits, w.distinction), e.direction);
    if (mode == EditMode::Relight)
      t.decorrelation = t.decorrelation + decorrelation_loss(batch.original_parts.albedo,
                                                             live(e.edited.pixels, w.decorrelation),
                                                             s.lightness_sigma, w.deco_sign);
    transients.push_back(context.transient(e.parts, mode));
  }
  t.consistency = t.consistency * per_edit;
  t.perceptual = t.perceptual * per_edit;
  t.distinction = t.distinction * per_edit;
  t.decorrelation = t.decorrelation * per_edit;
  if (transients.size() >= 2) {
    if (w.diversity == 0.0)
      for (Tensor& v : transients) v = v.detach();
    t.diversity = diversity_loss(transients, s.diversity);
  }

  t.total = w.consistency * t.consistency + w.perceptual * t.perceptual + w.diversity * t.diversity +
            w.distinction * t.distinction + w.decorrelation * t.decorrelation;
  return t;
}

}  // namespace litsearch
