#include "grad_suite.hpp"

#include "litsearch/decomp.hpp"
#include "litsearch/dirsearch.hpp"
#include "litsearch/losses.hpp"
#include "litsearch/percept.hpp"
#include "litsearch/scenegen.hpp"

#include <cmath>
#include <memory>
#include <set>

namespace litsearch::testing {

namespace {

using Inputs = std::vector<Eigen::ArrayXd>;
using Args = std::vector<Tensor>;

Eigen::ArrayXd uniform(Index n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::ArrayXd a(n);
  for (Index i = 0; i < n; ++i) a[i] = u(rng);
  return a;
}

// Uniform in [lo, hi] but at least `margin` from every kink.
Eigen::ArrayXd avoiding(Index n, double lo, double hi, std::vector<double> kinks, double margin,
                        std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::ArrayXd a(n);
  for (Index i = 0; i < n; ++i) {
    bool ok = false;
    while (!ok) {
      a[i] = u(rng);
      ok = true;
      for (double k : kinks) ok = ok && std::abs(a[i] - k) > margin;
    }
  }
  return a;
}

std::function<Inputs(std::mt19937_64&)> sampler(std::vector<Index> sizes, double lo = -1.5, double hi = 1.5) {
  return [sizes, lo, hi](std::mt19937_64& rng) {
    Inputs out;
    for (Index n : sizes) out.push_back(uniform(n, lo, hi, rng));
    return out;
  };
}

Tensor as(const Tensor& t, Shape shape) { return reshape(t, std::move(shape)); }

std::shared_ptr<const ConvKernel> kernel(Index out, Index in, Index h, Index w) {
  auto k = std::make_shared<ConvKernel>();
  k->out_channels = out;
  k->in_channels = in;
  k->height = h;
  k->width = w;
  k->weights.resize(out * in * h * w);
  for (Index i = 0; i < k->weights.size(); ++i) k->weights[i] = std::sin(0.9 * double(i) + 0.3);
  return k;
}

// Leaky units are kinked at zero; a draw is usable when every feature past
// level 0 sits clear of the kink by more than any finite-difference step moves it.
bool clear_of_kinks(const FeaturePyramid& pyr, const Eigen::ArrayXd& img, Shape shape, const std::set<Index>& levels) {
  for (const Tensor& f : pyr.extract(Tensor::constant(std::move(shape), img), levels))
    if (f.value().abs().minCoeff() < 1e-3) return false;
  return true;
}

// A 16 x 16 generator keeps scene-level checks fast.
const Generator& tiny_generator() {
  static const Generator gen([] {
    GeneratorConfig c;
    c.resolution = 16;
    return c;
  }());
  return gen;
}

const FeaturePyramid& perceptual_pyramid() {
  static const FeaturePyramid pyr(9, 3, 3);
  return pyr;
}

const LossContext& tiny_context() {
  static const LossContext ctx(LossSettings::for_resolution(16));
  return ctx;
}

StyleCode tiny_code(std::uint64_t seed) {
  auto rng = std::mt19937_64(seed);
  return map_latent(tiny_generator().sample_latent(rng), tiny_generator());
}

std::vector<GradCase> op_cases() {
  std::vector<GradCase> c;
  c.push_back({"add", [](const Args& a) { return project(a[0] + a[1]); }, sampler({6, 6})});
  c.push_back({"add_broadcast", [](const Args& a) { return project(a[0] + a[1]); }, sampler({6, 1})});
  c.push_back({"sub", [](const Args& a) { return project(a[0] - a[1]); }, sampler({6, 6})});
  c.push_back({"mul", [](const Args& a) { return project(a[0] * a[1]); }, sampler({6, 6})});
  c.push_back({"div", [](const Args& a) { return project(a[0] / a[1]); },
               [](std::mt19937_64& r) { return Inputs{uniform(6, -1, 1, r), uniform(6, 0.5, 2, r)}; }});
  c.push_back({"neg", [](const Args& a) { return project(-a[0]); }, sampler({6})});
  c.push_back({"leaky_relu", [](const Args& a) { return project(leaky_relu(a[0], 0.2)); },
               [](std::mt19937_64& r) { return Inputs{avoiding(8, -2, 2, {0.0}, 0.05, r)}; }});
  c.push_back({"sigmoid", [](const Args& a) { return project(sigmoid(a[0])); }, sampler({6}, -4, 4)});
  c.push_back({"tanh", [](const Args& a) { return project(tanh(a[0])); }, sampler({6}, -3, 3)});
  c.push_back({"sin", [](const Args& a) { return project(sin(a[0])); }, sampler({6}, -4, 4)});
  c.push_back({"cos", [](const Args& a) { return project(cos(a[0])); }, sampler({6}, -4, 4)});
  c.push_back({"exp", [](const Args& a) { return project(exp(a[0])); }, sampler({6}, -2, 2)});
  c.push_back({"log", [](const Args& a) { return project(log(a[0])); }, sampler({6}, 0.2, 3)});
  c.push_back({"sqrt", [](const Args& a) { return project(sqrt(a[0])); }, sampler({6}, 0.2, 3)});
  c.push_back({"square", [](const Args& a) { return project(square(a[0])); }, sampler({6})});
  c.push_back({"pow", [](const Args& a) { return project(pow(a[0], 2.5)); }, sampler({6}, 0.2, 2)});
  c.push_back({"clamp_min", [](const Args& a) { return project(clamp_min(a[0], 0.1)); },
               [](std::mt19937_64& r) { return Inputs{avoiding(8, -1, 1, {0.1}, 0.05, r)}; }});
  c.push_back({"clamp", [](const Args& a) { return project(clamp(a[0], 0.0, 1.0)); },
               [](std::mt19937_64& r) { return Inputs{avoiding(8, -0.5, 1.5, {0.0, 1.0}, 0.05, r)}; }});
  c.push_back({"huber", [](const Args& a) { return project(huber(a[0], 0.5)); },
               [](std::mt19937_64& r) { return Inputs{avoiding(8, -2, 2, {-0.5, 0.5}, 0.05, r)}; }});
  c.push_back({"sum", [](const Args& a) { return sum(a[0] * a[0]); }, sampler({6})});
  c.push_back({"mean", [](const Args& a) { return mean(a[0] * a[0]); }, sampler({6})});
  c.push_back({"l2_norm", [](const Args& a) { return l2_norm(a[0]); }, sampler({6})});
  c.push_back({"quantile", [](const Args& a) { return quantile(a[0], 0.7); }, sampler({9})});
  c.push_back({"reshape", [](const Args& a) { return project(reshape(a[0], {2, 3})); }, sampler({6})});
  c.push_back({"concat_axis0",
               [](const Args& a) { return project(concat({as(a[0], {2, 3}), as(a[1], {1, 3})}, 0)); },
               sampler({6, 3})});
  c.push_back({"concat_axis1",
               [](const Args& a) { return project(concat({as(a[0], {2, 3}), as(a[1], {2, 1})}, 1)); },
               sampler({6, 2})});
  c.push_back({"slice", [](const Args& a) { return project(slice(as(a[0], {4, 3}), 1, 2)); }, sampler({12})});
  c.push_back({"transpose", [](const Args& a) { return project(transpose(as(a[0], {2, 3}))); }, sampler({6})});
  c.push_back({"matmul", [](const Args& a) { return project(matmul(as(a[0], {2, 3}), as(a[1], {3, 4}))); },
               sampler({6, 12})});
  c.push_back({"conv2d_zero",
               [](const Args& a) { return project(conv2d_fixed(as(a[0], {2, 6, 6}), kernel(3, 2, 3, 3))); },
               sampler({72})});
  c.push_back({"conv2d_edge_stride2",
               [](const Args& a) {
                 return project(conv2d_fixed(as(a[0], {2, 6, 6}), kernel(3, 2, 3, 3), {2, Padding::Edge, false}));
               },
               sampler({72})});
  c.push_back({"conv2d_depthwise",
               [](const Args& a) {
                 return project(conv2d_fixed(as(a[0], {2, 6, 6}), kernel(1, 1, 1, 5), {1, Padding::Edge, true}));
               },
               sampler({72})});
  c.push_back({"downsample2x", [](const Args& a) { return project(downsample2x(as(a[0], {2, 4, 6}))); },
               sampler({48})});
  c.push_back({"log_softmax", [](const Args& a) { return project(log_softmax(a[0])); }, sampler({5}, -3, 3)});
  c.push_back({"logdet_psd",
               [](const Args& a) {
                 Tensor x = as(a[0], {3, 3});
                 Tensor n = matmul(x, transpose(x)) + Tensor::from_matrix(Eigen::MatrixXd::Identity(3, 3));
                 return logdet_psd(n);
               },
               sampler({9})});
  return c;
}

std::vector<GradCase> percept_cases() {
  std::vector<GradCase> c;
  c.push_back({"gaussian_blur", [](const Args& a) { return project(gaussian_blur(as(a[0], {2, 8, 8}), 1.5)); },
               sampler({128})});
  c.push_back({"pool_to", [](const Args& a) { return project(pool_to(as(a[0], {2, 8, 8}), 2)); }, sampler({128})});
  c.push_back({"channel_mean", [](const Args& a) { return project(channel_mean(as(a[0], {3, 4, 4}))); },
               sampler({48})});
  c.push_back({"repeat_channels", [](const Args& a) { return project(repeat_channels(as(a[0], {1, 4, 4}), 3)); },
               sampler({16})});
  c.push_back({"feature_pyramid",
               [](const Args& a) {
                 static const FeaturePyramid pyr(5, 3, 3);
                 const auto feats = pyr.extract(as(a[0], {3, 8, 8}), {1, 2});
                 return project(feats[0]) + project(feats[1]);
               },
               [](std::mt19937_64& r) {
                 static const FeaturePyramid pyr(5, 3, 3);
                 for (;;) {
                   Eigen::ArrayXd x = uniform(192, 0, 1, r);
                   if (clear_of_kinks(pyr, x, {3, 8, 8}, {1, 2})) return Inputs{x};
                 }
               }});
  c.push_back({"smoothed_unit_vector",
               [](const Args& a) { return project(smoothed_unit_vector(as(a[0], {2, 8, 8}), 1.0, 4)); },
               sampler({128}, 0.1, 1)});
  c.push_back({"transient_vector",
               [](const Args& a) {
                 return project(transient_vector(as(a[0], {1, 8, 8}), as(a[1], {3, 8, 8}), 1.0, 4));
               },
               [](std::mt19937_64& r) { return Inputs{uniform(64, 0.1, 1.5, r), uniform(192, 0, 0.5, r)}; }});
  c.push_back({"lightness_map", [](const Args& a) { return project(lightness_map(as(a[0], {3, 8, 8}), 2.0)); },
               sampler({192}, 0, 1)});
  return c;
}

std::vector<GradCase> scene_cases() {
  std::vector<GradCase> c;
  c.push_back({"map_latent",
               [](const Args& a) { return project(map_latent_tensor(a[0], tiny_generator())); },
               [](std::mt19937_64& r) {
                 // Keep pre-activations away from the leaky kinks.
                 for (;;) {
                   LatentZ z = tiny_generator().sample_latent(r);
                   const auto& m = tiny_generator().mapping();
                   const Eigen::VectorXd p1 = m.w1 * z + m.b1;
                   const Eigen::VectorXd h1 = p1.unaryExpr([](double v) { return v > 0 ? v : 0.2 * v; });
                   const Eigen::VectorXd p2 = m.w2 * h1 + m.b2;
                   if (p1.cwiseAbs().minCoeff() > 1e-3 && p2.cwiseAbs().minCoeff() > 1e-3)
                     return Inputs{z.array()};
                 }
               }});
  c.push_back({"synthesize",
               [](const Args& a) {
                 const auto& g = tiny_generator().config();
                 return project(synthesize(as(a[0], {g.layers, g.style_dim}), tiny_generator()).pixels);
               },
               [](std::mt19937_64& r) {
                 const StyleCode w = tiny_code(r());
                 return Inputs{Eigen::Map<const Eigen::ArrayXd>(w.data(), w.size())};
               }});
  c.push_back({"classify_pair",
               [](const Args& a) {
                 static const Classifier f(4, 16, 4, 3);
                 return project(classify_pair(f, as(a[0], {3, 16, 16}), as(a[1], {3, 16, 16})));
               },
               sampler({768, 768}, 0, 1)});
  return c;
}

std::vector<GradCase> loss_cases() {
  std::vector<GradCase> c;
  c.push_back({"const_loss",
               [](const Args& a) { return const_loss(as(a[0], {3, 4, 4}), as(a[1], {3, 4, 4}), 0.1); },
               [](std::mt19937_64& r) {
                 Eigen::ArrayXd x = uniform(48, 0, 1, r);
                 Eigen::ArrayXd d = avoiding(48, -0.3, 0.3, {-0.1, 0.0, 0.1}, 0.01, r);
                 return Inputs{x, x + d};
               }});
  c.push_back({"perceptual_loss",
               [](const Args& a) {
                 return perceptual_loss(as(a[0], {3, 8, 8}), as(a[1], {3, 8, 8}), perceptual_pyramid(), {0, 1, 2});
               },
               [](std::mt19937_64& r) {
                 for (;;) {
                   Eigen::ArrayXd x = uniform(192, 0, 1, r), y = uniform(192, 0, 1, r);
                   if (clear_of_kinks(perceptual_pyramid(), x, {3, 8, 8}, {1, 2}) &&
                       clear_of_kinks(perceptual_pyramid(), y, {3, 8, 8}, {1, 2}))
                     return Inputs{x, y};
                 }
               }});
  c.push_back({"diversity_loss",
               [](const Args& a) {
                 std::vector<Tensor> t;
                 for (const Tensor& x : a) t.push_back(x / l2_norm(x));
                 return diversity_loss(t);
               },
               sampler({6, 6, 6})});
  c.push_back({"distinction_loss", [](const Args& a) { return distinction_loss(a[0], 2); }, sampler({4}, -3, 3)});
  c.push_back({"decorrelation_penalty",
               [](const Args& a) {
                 return decorrelation_loss(as(a[0], {3, 8, 8}), as(a[1], {3, 8, 8}), 2.0, DecoSign::Penalty);
               },
               sampler({192, 192}, 0.05, 1)});
  c.push_back({"decorrelation_printed",
               [](const Args& a) {
                 return decorrelation_loss(as(a[0], {3, 8, 8}), as(a[1], {3, 8, 8}), 2.0, DecoSign::Printed);
               },
               sampler({192, 192}, 0.05, 1)});
  c.push_back({"total_loss_directions",
               [](const Args& a) {
                 // Gradient of the full objective with respect to three directions.
                 const Generator& gen = tiny_generator();
                 const auto& g = gen.config();
                 static const Classifier f(3, 8, 4, 11);
                 static const StyleCode w = tiny_code(42);
                 Tensor dirs = as(a[0], {3, g.code_size()});
                 LossBatch batch;
                 batch.original = synthesize(w, gen);
                 batch.original_parts = oracle_decompose(batch.original);
                 for (Index i = 0; i < 3; ++i) {
                   EditTerm e;
                   e.direction = i;
                   e.edited = synthesize(to_tensor(w) + as(slice(dirs, i, 1), {g.layers, g.style_dim}), gen);
                   e.parts = oracle_decompose(e.edited);
                   e.logits = classify_pair(f, batch.original.pixels, e.edited.pixels);
                   batch.edits.push_back(std::move(e));
                 }
                 LossWeights weights;
                 return total_loss(batch, weights, tiny_context()).total;
               },
               [](std::mt19937_64& r) {
                 return Inputs{uniform(3 * tiny_generator().config().code_size(), -0.15, 0.15, r)};
               }});
  return c;
}

}  // namespace

Tensor project(const Tensor& t) {
  Eigen::ArrayXd w(t.numel());
  for (Index i = 0; i < w.size(); ++i) w[i] = std::sin(1.37 * double(i) + 0.51);
  return sum(t * Tensor::constant(t.shape(), w));
}

std::vector<GradCase> gradient_suite() {
  std::vector<GradCase> all;
  for (auto group : {op_cases(), percept_cases(), scene_cases(), loss_cases()})
    for (auto& c : group) all.push_back(std::move(c));
  return all;
}

namespace {

// Central differences at h and h / 10 agree at a point where f is smooth on
// the scale of h; otherwise a kink lies within reach of the stencil.
bool stencil_is_smooth(const GradcheckResult& coarse, const GradcheckResult& fine) {
  for (std::size_t i = 0; i < coarse.numeric.size(); ++i) {
    const double scale = std::max(coarse.numeric[i].matrix().norm(), 1e-12);
    if ((coarse.numeric[i] - fine.numeric[i]).matrix().norm() > 1e-6 * scale) return false;
  }
  return true;
}

}  // namespace

GradOutcome run_case(const GradCase& c, int trials, std::uint64_t seed) {
  constexpr int kMaxRedraws = 10;
  GradOutcome out{c.name, 0.0, 0, 0};
  std::mt19937_64 rng(seed);
  for (int t = 0; t < trials; ++t) {
    for (int draw = 0;; ++draw) {
      const auto inputs = c.sample(rng);
      const GradcheckResult r = gradcheck(c.f, inputs, 1e-5);
      if (draw < kMaxRedraws && !stencil_is_smooth(r, gradcheck(c.f, inputs, 1e-6))) {
        ++out.redraws;
        continue;
      }
      out.worst_error = std::max(out.worst_error, r.max_relative_error);
      ++out.trials;
      break;
    }
  }
  return out;
}

}  // namespace litsearch::testing
