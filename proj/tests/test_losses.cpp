#include "doctest.h"
#include "grad_suite.hpp"

#include "litsearch/dirsearch.hpp"
#include "litsearch/errors.hpp"
#include "litsearch/log.hpp"
#include "litsearch/losses.hpp"
#include "litsearch/random.hpp"

#include <cmath>
#include <numbers>

using namespace litsearch;

namespace {

Tensor one(double v) { return Tensor::constant({1}, Eigen::ArrayXd::Constant(1, v)); }

Tensor vec(std::initializer_list<double> v) {
  Eigen::ArrayXd a(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) a[i++] = x;
  return Tensor::constant({a.size()}, a);
}

// Collects warnings for the lifetime of the guard.
struct WarningCapture {
  std::vector<std::string> messages;
  WarningHandler previous;
  WarningCapture() {
    previous = set_warning_handler([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_handler(previous); }
};

// Two-patch scene: left half of value `left`, right half `right`, on 3 channels.
Tensor two_patch(double left, double right) {
  Eigen::ArrayXd a(3 * 8 * 8);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) a[(c * 8 + y) * 8 + x] = x < 4 ? left : right;
  return Tensor::constant({3, 8, 8}, a);
}

const Generator& small_generator() {
  static const Generator gen([] {
    GeneratorConfig c;
    c.resolution = 32;
    return c;
  }());
  return gen;
}

LossBatch fixed_batch() {
  const Generator& gen = small_generator();
  auto rng = seeded_stream(8, 0);
  const StyleCode w = map_latent(gen.sample_latent(rng), gen);
  const Classifier f(3, 8, 8, 2);
  std::mt19937_64 drng(9);
  std::normal_distribution<double> n(0.0, 0.1);
  LossBatch batch;
  batch.original = synthesize(w, gen);
  batch.original_parts = oracle_decompose(batch.original);
  for (Index i = 0; i < 3; ++i) {
    StyleCode d(w.rows(), w.cols());
    for (Index k = 0; k < d.size(); ++k) d.data()[k] = n(drng);
    EditTerm e;
    e.direction = i;
    e.edited = synthesize(StyleCode(w + d), gen);
    e.parts = oracle_decompose(e.edited);
    e.logits = classify_pair(f, batch.original.pixels, e.edited.pixels);
    batch.edits.push_back(std::move(e));
  }
  return batch;
}

}  // namespace

TEST_CASE("huber consistency boundary cases") {
  CHECK(const_loss(one(0.3), one(0.3), 1.0).item() == 0.0);
  CHECK(std::abs(const_loss(one(0.0), one(1.0), 1.0).item() - 0.5) < 1e-9);
  CHECK(std::abs(const_loss(one(0.0), one(2.0), 1.0).item() - 1.5) < 1e-9);
  CHECK(std::abs(const_loss(one(0.0), one(-2.0), 1.0).item() - 1.5) < 1e-9);
  // Boundary pattern at another delta: delta^2 / 2 and 1.5 delta^2.
  CHECK(std::abs(const_loss(one(0.0), one(0.1), 0.1).item() - 0.005) < 1e-9);
  CHECK(std::abs(const_loss(one(0.0), one(0.2), 0.1).item() - 0.015) < 1e-9);
  CHECK_THROWS_AS(const_loss(vec({1, 2}), vec({1, 2, 3}), 0.1), ShapeError);
}

TEST_CASE("perceptual loss is zero on identity, symmetric and monotone") {
  const FeaturePyramid pyr(1, 3);
  const Tensor a = two_patch(0.2, 0.7);
  const Tensor b = two_patch(0.3, 0.5);
  CHECK(perceptual_loss(a, a, pyr, {0, 1, 2}).item() == 0.0);
  CHECK(perceptual_loss(a, b, pyr, {0, 1, 2}).item() == doctest::Approx(perceptual_loss(b, a, pyr, {0, 1, 2}).item()));

  const Eigen::ArrayXd dir = two_patch(1.0, -0.5).value() * 1e-3;
  const Tensor x1 = Tensor::constant(a.shape(), a.value() + dir);
  const Tensor x2 = Tensor::constant(a.shape(), a.value() + 2.0 * dir);
  CHECK(perceptual_loss(a, x2, pyr, {0}).item() >= perceptual_loss(a, x1, pyr, {0}).item());
  CHECK(perceptual_loss(a, x2, pyr, {0}).item() == doctest::Approx(2 * perceptual_loss(a, x1, pyr, {0}).item()));
  CHECK_THROWS_AS(perceptual_loss(a, Tensor::zeros({3, 4, 4}), pyr, {0}), ShapeError);
}

TEST_CASE("diversity analytic cases") {
  WarningCapture capture;
  const DiversityOptions exact{0.0, 1e4};
  {
    const std::vector<Tensor> t{vec({1, 0}), vec({1 / std::sqrt(2.0), 1 / std::sqrt(2.0)})};
    CHECK(std::abs(diversity_loss(t, exact).item() - std::log(2.0)) < 1e-9);
  }
  {
    const std::vector<Tensor> t{vec({1, 0, 0}), vec({0, 1, 0}), vec({0, 0, 1})};
    CHECK(std::abs(diversity_loss(t, exact).item()) < 1e-9);
    const double eps = 1e-6;
    CHECK(std::abs(diversity_loss(t).item()) <= 3 * std::log(1 + eps) + 1e-12);
  }
  CHECK(capture.messages.empty());
  {
    const std::vector<Tensor> t{vec({0.6, 0.8}), vec({0.6, 0.8})};
    CHECK(diversity_loss(t).item() == 1e4);
    CHECK(capture.messages.size() == 1);
  }
}

TEST_CASE("diversity is nonnegative for unit vectors") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> t;
    for (int i = 0; i < 4; ++i) {
      Eigen::ArrayXd v(6);
      for (auto& x : v) x = n(rng);
      t.push_back(Tensor::constant({6}, v / v.matrix().norm()));
    }
    CHECK(diversity_loss(t).item() >= -4 * std::log(1 + 1e-6));
  }
}

TEST_CASE("distinction cross-entropy cases") {
  CHECK(std::abs(distinction_loss(vec({0.3, 0.3, 0.3, 0.3}), 1).item() - std::log(4.0)) < 1e-9);
  CHECK(distinction_loss(vec({50, 0, 0, 0}), 0).item() < 1e-20);
  // p_true = e^-1: logits (0, x, x) with e^0 / (1 + 2 e^x) = e^-1.
  const double x = std::log((std::exp(1.0) - 1) / 2);
  CHECK(std::abs(distinction_loss(vec({0, x, x}), 0).item() - 1.0) < 1e-9);
  // Clamp keeps a hopeless prediction finite.
  CHECK(distinction_loss(vec({-1000, 0}), 0).item() == 30.0);
  CHECK_THROWS_AS(distinction_loss(vec({0, 0}), 2), IndexError);
  CHECK_THROWS_AS(distinction_loss(vec({0, 0}), -1), IndexError);
}

TEST_CASE("decorrelation cosine cases") {
  const Tensor a = two_patch(0.2, 0.8);
  CHECK(std::abs(decorrelation_loss(a, a, 0.5, DecoSign::Penalty).item() - 1.0) < 1e-9);
  CHECK(std::abs(decorrelation_loss(a, a, 0.5, DecoSign::Printed).item() + 1.0) < 1e-9);

  // Mean-centred orthogonal maps: left/right and top/bottom splits around zero.
  Eigen::ArrayXd lr(3 * 8 * 8), tb(3 * 8 * 8);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) {
        lr[(c * 8 + y) * 8 + x] = x < 4 ? 1.0 : -1.0;
        tb[(c * 8 + y) * 8 + x] = y < 4 ? 1.0 : -1.0;
      }
  const Tensor p = Tensor::constant({3, 8, 8}, lr), q = Tensor::constant({3, 8, 8}, tb);
  CHECK(std::abs(decorrelation_loss(p, q, 0.0, DecoSign::Penalty).item()) < 1e-9);
  CHECK(std::abs(decorrelation_loss(p, q, 0.0, DecoSign::Printed).item()) < 1e-9);
  CHECK(std::abs(decorrelation_loss(p, Tensor::constant({3, 8, 8}, -lr), 0.0).item() + 1.0) < 1e-9);

  CHECK_THROWS_AS(decorrelation_loss(Tensor::zeros({3, 8, 8}), a, 1.0), Error);
  CHECK_THROWS_AS(decorrelation_loss(a, Tensor::zeros({3, 4, 4}), 1.0), ShapeError);
}

TEST_CASE("decorrelation penalty drops when shading opposes albedo") {
  // Albedo bright on the left; shading either follows it or opposes it.
  const Tensor albedo = two_patch(0.8, 0.3);
  const Tensor follows = albedo * two_patch(1.2, 0.6);
  const Tensor opposes = albedo * two_patch(0.6, 1.2);
  const double with = decorrelation_loss(albedo, follows, 1.0).item();
  const double against = decorrelation_loss(albedo, opposes, 1.0).item();
  CHECK(against < with);
}

TEST_CASE("composite losses pass gradcheck") {
  for (const auto& c : testing::gradient_suite()) {
    const bool loss = c.name.find("loss") != std::string::npos || c.name.rfind("decorrelation", 0) == 0;
    if (!loss) continue;
    CAPTURE(c.name);
    CHECK(testing::run_case(c, 3, 23).worst_error < 1e-4);
  }
}

TEST_CASE("total loss with all weights zero") {
  const LossContext ctx(LossSettings::for_resolution(32));
  LossWeights w;
  w.consistency = w.perceptual = w.diversity = w.distinction = w.decorrelation = 0.0;
  const LossTerms t = total_loss(fixed_batch(), w, ctx);
  CHECK(t.total.item() == 0.0);
  CHECK(t.consistency.item() > 0.0);
}

TEST_CASE("total loss is the weighted sum of independently evaluated terms") {
  const LossContext ctx(LossSettings::for_resolution(32));
  const LossBatch batch = fixed_batch();
  LossWeights w;
  const LossTerms t = total_loss(batch, w, ctx);
  const LossSettings& s = ctx.settings();

  const Tensor po = batch.original_parts.albedo;
  double cons = 0, per = 0, dist = 0, deco = 0;
  std::vector<Tensor> transients;
  for (const EditTerm& e : batch.edits) {
    cons += const_loss(po, e.parts.albedo, w.huber_delta).item();
    per += perceptual_loss(po, e.parts.albedo, ctx.pyramid(EditMode::Relight), s.perceptual_levels).item();
    dist += distinction_loss(e.logits, e.direction).item();
    deco += decorrelation_loss(po, e.edited.pixels, s.lightness_sigma).item();
    transients.push_back(transient_vector(e.parts.shading, e.parts.gloss, s.transient_sigma, s.transient_res));
  }
  const double m = double(batch.edits.size());
  const double div = diversity_loss(transients, s.diversity).item();
  const double expected = w.consistency * cons / m + w.perceptual * per / m + w.diversity * div +
                          w.distinction * dist / m + w.decorrelation * deco / m;
  CHECK(t.total.item() == doctest::Approx(expected).epsilon(1e-12));
  const LossReport r = t.report();
  CHECK(r.consistency == doctest::Approx(cons / m).epsilon(1e-12));
  CHECK(r.diversity == doctest::Approx(div).epsilon(1e-12));
  CHECK(r.total == t.total.item());
}

TEST_CASE("recolor mode drops decorrelation with a warning") {
  WarningCapture capture;
  LossWeights w;
  w.mode = EditMode::Recolor;
  w.decorrelation = 1.0;
  const LossWeights e = w.effective();
  CHECK(e.decorrelation == 0.0);
  CHECK(capture.messages.size() == 1);

  const LossContext ctx(LossSettings::for_resolution(32));
  const LossTerms t = total_loss(fixed_batch(), w, ctx);
  CHECK(t.weights.decorrelation == 0.0);
  CHECK(t.decorrelation.item() == 0.0);
}

TEST_CASE("weights json names the offending field") {
  LossWeights w;
  const nlohmann::json j = w;
  CHECK(j.get<LossWeights>().consistency == w.consistency);
  try {
    nlohmann::json bad = j;
    bad["diversity"] = -1.0;
    (void)bad.get<LossWeights>();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "diversity");
  }
  CHECK_THROWS_AS(nlohmann::json({{"mode", "paint"}}).get<LossWeights>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json({{"deco_sign", "both"}}).get<LossWeights>(), ConfigError);
  CHECK(nlohmann::json({{"deco_sign", "printed"}}).get<LossWeights>().deco_sign == DecoSign::Printed);
}
