#include "litsearch/evalkit.hpp"

#include "litsearch/adam.hpp"
#include "litsearch/errors.hpp"
#include "litsearch/random.hpp"

#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace litsearch {

namespace {

// Stream tags under EvalConfig::seed.
constexpr std::uint64_t kTagCodes = 31;
constexpr std::uint64_t kTagShiftA = 32;
constexpr std::uint64_t kTagShiftB = 33;
constexpr std::uint64_t kTagInversionCodes = 34;
constexpr std::uint64_t kTagRandomDirections = 41;
constexpr std::uint64_t kTagRestarts = 51;

std::vector<StyleCode> codes_from(const Generator& gen, Index n, std::mt19937_64 rng) {
  std::vector<StyleCode> codes;
  codes.reserve(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) codes.push_back(map_latent(gen.sample_latent(rng), gen));
  return codes;
}

Eigen::ArrayXd persistent_values(const GroundTruth& gt, EditMode mode) {
  if (mode == EditMode::Relight) return gt.albedo.value();
  Eigen::ArrayXd out(gt.shading.numel() + gt.gloss.numel());
  out << gt.shading.value(), gt.gloss.value();
  return out;
}

std::vector<SceneImage> render_all(std::span<const StyleCode> codes, const Generator& gen) {
  std::vector<SceneImage> out;
  out.reserve(codes.size());
  for (const StyleCode& w : codes) out.push_back(synthesize(w, gen));
  return out;
}

Index argmax(const Eigen::ArrayXd& v) {
  Index best = 0;
  for (Index k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<StyleCode> sample_codes(const Generator& gen, Index n, std::uint64_t seed) {
  return codes_from(gen, n, seeded_stream(seed, kTagCodes));
}

DirectionSet random_directions(const DirectionSet& like, std::uint64_t seed) {
  DirectionSet out = like;
  out.meta = {{"random_baseline_seed", seed}};
  auto rng = seeded_stream(seed, kTagRandomDirections);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Index r = 0; r < out.dirs.rows(); ++r) {
    Eigen::RowVectorXd row(out.dirs.cols());
    for (Index c = 0; c < row.size(); ++c) row[c] = n(rng);
    out.dirs.row(r) = row * (like.dirs.row(r).norm() / row.norm());
  }
  return out;
}

Eigen::VectorXd consistency_error(const DirectionSet& set, const Generator& gen, std::span<const StyleCode> codes,
                                  EditMode mode) {
  check_compatible(set, gen);
  if (codes.empty()) throw Error("consistency_error: no scenes");
  Eigen::VectorXd err = Eigen::VectorXd::Zero(set.size());
  for (const StyleCode& w : codes) {
    const Eigen::ArrayXd base = persistent_values(*synthesize(w, gen).ground_truth, mode);
    for (Index i = 0; i < set.size(); ++i) {
      const Eigen::ArrayXd edited = persistent_values(*synthesize(apply_direction(w, set, i), gen).ground_truth, mode);
      err[i] += (edited - base).abs().mean();
    }
  }
  return err / double(codes.size());
}

Eigen::VectorXd subspace_alignment(const DirectionSet& set, const Generator& gen) {
  check_compatible(set, gen);
  Eigen::VectorXd ratio(set.size());
  for (Index i = 0; i < set.size(); ++i) {
    const double n = set.dirs.row(i).norm();
    if (!(n > 0.0)) throw Error("subspace_alignment: direction " + std::to_string(i) + " is zero");
    ratio[i] = (gen.persistent_mixing() * set.dirs.row(i).transpose()).norm() / n;
  }
  return ratio;
}

GramSpectrum gram_spectrum(const DirectionSet& set, const Generator& gen, std::span<const StyleCode> codes,
                           const LossContext& context, EditMode mode) {
  check_compatible(set, gen);
  if (codes.empty()) throw Error("gram_spectrum: no scenes");
  const Index m = set.size();
  GramSpectrum out;
  out.mean_gram = Eigen::MatrixXd::Zero(m, m);
  for (const StyleCode& w : codes) {
    Eigen::MatrixXd t;
    for (Index i = 0; i < m; ++i) {
      const SceneImage edited = synthesize(apply_direction(w, set, i), gen);
      const Eigen::ArrayXd v = context.transient(oracle_decompose(edited), mode).value();
      if (i == 0) t.resize(v.size(), m);
      t.col(i) = v.matrix();
    }
    out.mean_gram += t.transpose() * t;
  }
  out.mean_gram /= double(codes.size());
  out.n = Index(codes.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.mean_gram, Eigen::EigenvaluesOnly);
  out.eigenvalues = es.eigenvalues();
  for (Index i = 0; i < m; ++i)
    for (Index j = i + 1; j < m; ++j) out.max_abs_cosine = std::max(out.max_abs_cosine, std::abs(out.mean_gram(i, j)));
  return out;
}

Eigen::VectorXd distinction_accuracy(const DirectionSet& set, const Classifier& classifier, const Generator& gen,
                                     std::span<const StyleCode> codes) {
  check_compatible(set, gen);
  if (classifier.directions() != set.size())
    throw ShapeError("classifier predicts " + std::to_string(classifier.directions()) + " directions, set has " +
                     std::to_string(set.size()));
  if (codes.empty()) throw Error("distinction_accuracy: no scenes");
  Eigen::VectorXd hits = Eigen::VectorXd::Zero(set.size());
  for (const StyleCode& w : codes) {
    const SceneImage original = synthesize(w, gen);
    for (Index i = 0; i < set.size(); ++i) {
      const SceneImage edited = synthesize(apply_direction(w, set, i), gen);
      if (argmax(classify_pair(classifier, original.pixels, edited.pixels).value()) == i) hits[i] += 1.0;
    }
  }
  return hits / double(codes.size());
}

Eigen::VectorXd decorrelation_coeff(const DirectionSet& set, const Generator& gen, std::span<const StyleCode> codes,
                                    double sigma) {
  check_compatible(set, gen);
  if (codes.empty()) throw Error("decorrelation_coeff: no scenes");
  Eigen::VectorXd cos = Eigen::VectorXd::Zero(set.size());
  for (const StyleCode& w : codes) {
    const Tensor albedo = synthesize(w, gen).ground_truth->albedo;
    for (Index i = 0; i < set.size(); ++i) {
      const SceneImage edited = synthesize(apply_direction(w, set, i), gen);
      cos[i] += decorrelation_loss(albedo, edited.pixels, sigma, DecoSign::Penalty).item();
    }
  }
  return cos / double(codes.size());
}

Eigen::MatrixXd pooled_features(std::span<const SceneImage> images, const FeaturePyramid& pyramid, Index level) {
  if (images.empty()) throw Error("pooled_features: no images");
  Eigen::MatrixXd out(Index(images.size()), pyramid.channels(level));
  for (std::size_t k = 0; k < images.size(); ++k) {
    const Tensor f = pyramid.extract(images[k].pixels, {level}).front();
    const Index c = f.dim(0), hw = f.dim(1) * f.dim(2);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> maps(
        f.value().data(), c, hw);
    out.row(Index(k)) = maps.rowwise().mean().transpose();
  }
  return out;
}

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw Error("feature_stats: need at least two samples");
  FeatureStats s;
  s.n = features.rows();
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / double(s.n - 1);
  s.cov = (0.5 * (s.cov + s.cov.transpose())).eval();
  return s;
}

ShiftReport distribution_shift_report(const DirectionSet& relight, const DirectionSet* recolor, const Generator& gen,
                                      Index n_per_set, std::uint64_t seed, const FeaturePyramid& pyramid) {
  if (n_per_set < 64) throw Error("distribution_shift_report: n_per_set must be >= 64");
  check_compatible(relight, gen);
  if (recolor) check_compatible(*recolor, gen);

  const auto codes_a = codes_from(gen, n_per_set, seeded_stream(seed, kTagShiftA));
  const auto codes_b = codes_from(gen, n_per_set, seeded_stream(seed, kTagShiftB));
  auto stats = [&](std::span<const StyleCode> codes) {
    return feature_stats(pooled_features(render_all(codes, gen), pyramid));
  };
  auto edited = [&](auto&& edit) {
    std::vector<StyleCode> out;
    for (Index k = 0; k < n_per_set; ++k) out.push_back(edit(k, codes_b[std::size_t(k)]));
    return out;
  };

  const FeatureStats a = stats(codes_a);
  ShiftReport r;
  r.n_per_set = n_per_set;
  r.vanilla = frechet_distance(stats(codes_b), a);
  const Index m = relight.size();
  r.relight = frechet_distance(stats(edited([&](Index k, const StyleCode& w) {
                                 return apply_direction(w, relight, k % m);
                               })),
                               a);
  if (recolor) {
    const Index mc = recolor->size();
    r.recolor = frechet_distance(stats(edited([&](Index k, const StyleCode& w) {
                                   return apply_direction(w, *recolor, k % mc);
                                 })),
                                 a);
    r.both = frechet_distance(stats(edited([&](Index k, const StyleCode& w) {
                                return apply_direction(apply_direction(w, relight, k % m), *recolor, (k / m) % mc);
                              })),
                              a);
  }
  return r;
}

InversionResult invert_mapping(const StyleCode& target, const Generator& gen, const InversionOptions& options) {
  const GeneratorConfig& c = gen.config();
  if (target.rows() != c.layers || target.cols() != c.style_dim)
    throw ShapeError("invert_mapping: target is " + std::to_string(target.rows()) + " x " +
                     std::to_string(target.cols()) + ", expected " + std::to_string(c.layers) + " x " +
                     std::to_string(c.style_dim));
  if (options.restarts < 1 || options.steps < 0) throw ConfigError("inversion", "restarts >= 1 and steps >= 0");
  const Tensor goal = to_tensor(target);
  auto objective = [&](const Tensor& z) {
    const Tensor row = reshape(map_latent_tensor(z, gen), {1, c.style_dim});
    std::vector<Tensor> rows(static_cast<std::size_t>(c.layers), row);
    return mean(square(concat(rows, 0) - goal));
  };

  // The broadcast objective equals ||M(z) - row_mean||^2 / D plus a constant,
  // so the polish solves the normal equations against the row mean.
  const Eigen::VectorXd row_mean = target.colwise().mean().transpose();
  auto mean_square = [&](const LatentZ& z) {
    const Eigen::RowVectorXd w = map_latent(z, gen).row(0);
    return (target.rowwise() - w).squaredNorm() / double(target.size());
  };
  // Gauss-Newton with backtracking: the mapping is piecewise linear, so a full
  // step can leave its activation region; halving walks across the kink.
  auto polish = [&](LatentZ& z) {
    double f = mean_square(z);
    for (Index it = 0; it < options.polish_steps && f > 0.0; ++it) {
      const Eigen::MatrixXd j = mapping_jacobian(z, gen);
      const Eigen::VectorXd r = map_latent(z, gen).row(0).transpose() - row_mean;
      Eigen::MatrixXd h = j.transpose() * j;
      h.diagonal().array() += 1e-12 * (1.0 + h.diagonal().maxCoeff());
      const LatentZ step = h.ldlt().solve(j.transpose() * r);
      bool moved = false;
      for (double alpha = 1.0; alpha > 1e-6; alpha *= 0.5) {
        const LatentZ candidate = z - alpha * step;
        const double fc = mean_square(candidate);
        if (fc < f) {
          z = candidate;
          f = fc;
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
  };

  auto starts = seeded_stream(options.seed, kTagRestarts);
  InversionResult best;
  best.residual = std::numeric_limits<double>::infinity();
  for (Index r = 0; r < options.restarts; ++r) {
    const LatentZ z0 = gen.sample_latent(starts);
    Tensor z = Tensor::parameter({c.latent_dim}, z0.array());
    std::vector<Eigen::ArrayXd> value{z.value()};
    AdamState state = AdamState::init(value, AdamOptions{options.lr});
    for (Index s = 0; s < options.steps; ++s) {
      // Cosine decay from lr to 0; a constant step leaves Adam orbiting the minimum.
      state.options.lr = 0.5 * options.lr * (1.0 + std::cos(std::numbers::pi * double(s) / double(options.steps)));
      z.zero_grad();
      backward(objective(z));
      const std::vector<Eigen::ArrayXd> grad{z.grad()};
      adam_step(value, grad, state);
      z.mutable_value() = value[0];
    }
    LatentZ zhat = z.value().matrix();
    polish(zhat);
    const double residual = std::sqrt(mean_square(zhat));
    if (residual < best.residual) {
      best.residual = residual;
      best.z = zhat;
    }
  }
  return best;
}

std::vector<SceneImage> interpolate(const DirectionSet& set, const InterpolationPath& path, const Generator& gen,
                                    const StyleCode& w_plus) {
  check_compatible(set, gen);
  if (path.n_steps < 2) throw ConfigError("n_steps", "interpolation needs at least 2 steps");
  const StyleCode di = set.direction(path.i);
  const StyleCode dj = path.kind == PathKind::Pair ? set.direction(path.j) : di;
  std::vector<SceneImage> frames;
  for (Index k = 0; k < path.n_steps; ++k) {
    const double a = double(k) / double(path.n_steps - 1);
    if (path.kind == PathKind::Scale) {
      frames.push_back(synthesize(StyleCode(w_plus + (2.0 * a - 1.0) * di), gen));
    } else {
      frames.push_back(synthesize(StyleCode(w_plus + (1.0 - a) * di + a * dj), gen));
    }
  }
  return frames;
}

void MetricReport::add_per_direction(const std::string& metric, const Eigen::VectorXd& values, Index n) {
  for (Index i = 0; i < values.size(); ++i) rows.push_back({metric, i, values[i], n});
}

void MetricReport::add_summary(const std::string& metric, double value, Index n) {
  rows.push_back({metric, -1, value, n});
}

double MetricReport::summary(const std::string& metric) const {
  for (const MetricRow& r : rows)
    if (r.direction < 0 && r.metric == metric) return r.value;
  throw Error("no summary metric '" + metric + "'");
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "metric,direction,value,n\n";
  for (const MetricRow& r : rows) {
    os << r.metric << ',';
    if (r.direction < 0) {
      os << "all";
    } else {
      os << r.direction;
    }
    os << ',' << format_double(r.value) << ',' << r.n << '\n';
  }
  return os.str();
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json summary = nlohmann::json::object();
  nlohmann::json per_direction = nlohmann::json::object();
  for (const MetricRow& r : rows) {
    if (r.direction < 0) {
      summary[r.metric] = {{"value", r.value}, {"n", r.n}};
    } else {
      per_direction[r.metric].push_back(r.value);
    }
  }
  return {{"summary", summary}, {"per_direction", per_direction}, {"seeds", seeds}, {"criteria", criteria}};
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"n_consistency", c.n_consistency},
                     {"n_gram", c.n_gram},
                     {"n_distinction", c.n_distinction},
                     {"n_decorrelation", c.n_decorrelation},
                     {"n_shift", c.n_shift},
                     {"n_inversion", c.n_inversion},
                     {"inversion_restarts", c.inversion.restarts},
                     {"inversion_steps", c.inversion.steps},
                     {"inversion_lr", c.inversion.lr},
                     {"inversion_polish_steps", c.inversion.polish_steps}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  EvalConfig d;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("eval.") + key, e.what());
    }
  };
  get("seed", d.seed);
  get("n_consistency", d.n_consistency);
  get("n_gram", d.n_gram);
  get("n_distinction", d.n_distinction);
  get("n_decorrelation", d.n_decorrelation);
  get("n_shift", d.n_shift);
  get("n_inversion", d.n_inversion);
  get("inversion_restarts", d.inversion.restarts);
  get("inversion_steps", d.inversion.steps);
  get("inversion_lr", d.inversion.lr);
  get("inversion_polish_steps", d.inversion.polish_steps);
  for (auto [name, v] : {std::pair{"eval.n_consistency", d.n_consistency}, {"eval.n_gram", d.n_gram},
                         {"eval.n_distinction", d.n_distinction}, {"eval.n_decorrelation", d.n_decorrelation},
                         {"eval.n_inversion", d.n_inversion}})
    if (v < 1) throw ConfigError(name, "must be >= 1");
  if (d.n_shift < 64) throw ConfigError("eval.n_shift", "must be >= 64");
  d.inversion.seed = d.seed;
  c = d;
}

MetricReport evaluate(const EvalInputs& in, const Generator& gen, const LossContext& context,
                      const EvalConfig& config) {
  if (!in.relight) throw Error("evaluate: a relight direction set is required");
  const DirectionSet& set = *in.relight;
  check_compatible(set, gen);
  const Index m = set.size();
  MetricReport rep;
  rep.seeds = {{"eval", config.seed}, {"generator", gen.config().seed}, {"directions", set.generator_seed}};

  const auto codes = sample_codes(gen, std::max({config.n_consistency, config.n_gram, config.n_distinction,
                                                 config.n_decorrelation}),
                                  config.seed);
  auto first = [&](Index n) { return std::span<const StyleCode>(codes.data(), std::size_t(n)); };
  const DirectionSet random = random_directions(set, config.seed);

  // Consistency and oracle subspace recovery.
  const Eigen::VectorXd cons = consistency_error(set, gen, first(config.n_consistency), EditMode::Relight);
  const Eigen::VectorXd cons_rand = consistency_error(random, gen, first(config.n_consistency), EditMode::Relight);
  rep.add_per_direction("consistency_error", cons, config.n_consistency);
  rep.add_per_direction("consistency_error_random", cons_rand, config.n_consistency);
  const double cons_ratio = cons.mean() / cons_rand.mean();
  rep.add_summary("consistency_ratio", cons_ratio, config.n_consistency);

  const Eigen::VectorXd align = subspace_alignment(set, gen);
  const Eigen::VectorXd align_rand = subspace_alignment(random, gen);
  rep.add_per_direction("subspace_alignment", align, 1);
  rep.add_per_direction("subspace_alignment_random", align_rand, 1);
  const double align_ratio = median(align) / median(align_rand);
  rep.add_summary("alignment_median_ratio", align_ratio, m);
  rep.criteria["3_oracle_subspace_recovery"] = align_ratio < 0.3 && cons_ratio < 0.2;

  // Transient diversity.
  const GramSpectrum gram = gram_spectrum(set, gen, first(config.n_gram), context, EditMode::Relight);
  const GramSpectrum gram_rand = gram_spectrum(random, gen, first(config.n_gram), context, EditMode::Relight);
  rep.add_per_direction("gram_eigenvalue", gram.eigenvalues, gram.n);
  rep.add_summary("gram_lambda_min", gram.eigenvalues.minCoeff(), gram.n);
  rep.add_summary("gram_lambda_min_random", gram_rand.eigenvalues.minCoeff(), gram_rand.n);
  rep.add_summary("gram_max_abs_cosine", gram.max_abs_cosine, gram.n);
  rep.criteria["4_diversity"] = gram.eigenvalues.minCoeff() > 0.01 && gram.max_abs_cosine < 0.99;

  if (in.classifier) {
    const Eigen::VectorXd acc = distinction_accuracy(set, *in.classifier, gen, first(config.n_distinction));
    rep.add_per_direction("distinction_accuracy", acc, config.n_distinction);
    rep.add_summary("distinction_accuracy", acc.mean(), config.n_distinction * m);
    rep.criteria["5_distinction"] = acc.mean() > 0.9;
  }

  const double sigma = context.settings().lightness_sigma;
  const Eigen::VectorXd deco = decorrelation_coeff(set, gen, first(config.n_decorrelation), sigma);
  rep.add_per_direction("decorrelation_cosine", deco, config.n_decorrelation);
  rep.add_summary("decorrelation_cosine", deco.mean(), config.n_decorrelation * m);
  if (in.ablation) {
    const Eigen::VectorXd abl = decorrelation_coeff(*in.ablation, gen, first(config.n_decorrelation), sigma);
    rep.add_summary("decorrelation_cosine_ablation", abl.mean(), config.n_decorrelation * in.ablation->size());
    rep.criteria["6_decorrelation_ablation"] = deco.mean() < abl.mean();
  }

  const ShiftReport shift =
      distribution_shift_report(set, in.recolor, gen, config.n_shift, config.seed, context.pyramid(EditMode::Relight));
  rep.add_summary("frechet_vanilla_b", shift.vanilla, shift.n_per_set);
  rep.add_summary("frechet_relight", shift.relight, shift.n_per_set);
  if (shift.recolor && shift.both) {
    rep.add_summary("frechet_recolor", *shift.recolor, shift.n_per_set);
    rep.add_summary("frechet_both", *shift.both, shift.n_per_set);
    rep.criteria["7_distribution_shift"] =
        shift.relight > shift.vanilla && *shift.both >= shift.relight && *shift.both >= *shift.recolor;
  }

  // Inversion: reachable targets versus edited targets.
  const auto inv_codes = codes_from(gen, config.n_inversion, seeded_stream(config.seed, kTagInversionCodes));
  Eigen::VectorXd self(config.n_inversion), edited(config.n_inversion);
  InversionOptions inv = config.inversion;
  for (Index k = 0; k < config.n_inversion; ++k) {
    inv.seed = config.inversion.seed + std::uint64_t(k);
    self[k] = invert_mapping(inv_codes[std::size_t(k)], gen, inv).residual;
    edited[k] = invert_mapping(apply_direction(inv_codes[std::size_t(k)], set, k % m), gen, inv).residual;
  }
  rep.add_summary("inversion_self_median", median(self), config.n_inversion);
  rep.add_summary("inversion_self_max", self.maxCoeff(), config.n_inversion);
  rep.add_summary("inversion_edited_median", median(edited), config.n_inversion);
  rep.criteria["8_inversion_ood"] = self.maxCoeff() < 1e-3 && median(edited) > 10.0 * median(self);

  if (in.recolor) {
    const DirectionSet& rc = *in.recolor;
    check_compatible(rc, gen);
    const DirectionSet rc_random = random_directions(rc, config.seed + 1);
    const Eigen::VectorXd rcons = consistency_error(rc, gen, first(config.n_consistency), EditMode::Recolor);
    const Eigen::VectorXd rcons_rand = consistency_error(rc_random, gen, first(config.n_consistency), EditMode::Recolor);
    rep.add_per_direction("recolor_consistency_error", rcons, config.n_consistency);
    rep.add_per_direction("recolor_consistency_error_random", rcons_rand, config.n_consistency);
    const double rratio = rcons.mean() / rcons_rand.mean();
    rep.add_summary("recolor_consistency_ratio", rratio, config.n_consistency);
    const GramSpectrum rgram = gram_spectrum(rc, gen, first(config.n_gram), context, EditMode::Recolor);
    rep.add_per_direction("recolor_gram_eigenvalue", rgram.eigenvalues, rgram.n);
    rep.add_summary("recolor_gram_lambda_min", rgram.eigenvalues.minCoeff(), rgram.n);
    rep.criteria["9_recolor"] = rratio < 0.2 && rgram.eigenvalues.minCoeff() > 0.01;
    if (in.recolor_classifier) {
      const Eigen::VectorXd acc = distinction_accuracy(rc, *in.recolor_classifier, gen, first(config.n_distinction));
      rep.add_summary("recolor_distinction_accuracy", acc.mean(), config.n_distinction * rc.size());
    }
  }
  return rep;
}

}  // namespace litsearch
