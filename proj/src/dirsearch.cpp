#include "litsearch/dirsearch.hpp"

#include "litsearch/adam.hpp"
#include "litsearch/errors.hpp"
#include "litsearch/percept.hpp"
#include "litsearch/random.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace litsearch {

namespace {

constexpr double kLeak = 0.2;

// Stream tags under TrainConfig::seed.
constexpr std::uint64_t kTagDirections = 11;
constexpr std::uint64_t kTagClassifier = 12;
constexpr std::uint64_t kTagLatents = 13;
constexpr std::uint64_t kTagSubsets = 14;

Eigen::ArrayXd gaussian(std::mt19937_64& rng, Index n, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Eigen::ArrayXd a(n);
  for (Index i = 0; i < n; ++i) a[i] = dist(rng);
  return a;
}

nlohmann::json array_json(const Eigen::ArrayXd& a) { return std::vector<double>(a.data(), a.data() + a.size()); }

Eigen::ArrayXd array_from_json(const nlohmann::json& j, Index expected, const char* field) {
  const auto v = j.get<std::vector<double>>();
  if (Index(v.size()) != expected)
    throw ShapeError(std::string("classifier field '") + field + "' has " + std::to_string(v.size()) +
                     " values, expected " + std::to_string(expected));
  return Eigen::Map<const Eigen::ArrayXd>(v.data(), expected);
}

void project_rows(Eigen::ArrayXd& flat, Index rows, Index cols, double max_norm) {
  for (Index r = 0; r < rows; ++r) {
    auto row = flat.segment(r * cols, cols);
    const double n = std::sqrt(row.square().sum());
    if (n > max_norm) row *= max_norm / n;
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

Index TrainConfig::resolved_dirs_per_step() const {
  return dirs_per_step == 0 ? std::min<Index>(directions, 8) : dirs_per_step;
}

void TrainConfig::validate() const {
  if (directions < 2) throw ConfigError("train.directions", "must be >= 2");
  if (n_samples < 0) throw ConfigError("train.n_samples", "must be >= 0");
  if (!(lr_dirs > 0.0)) throw ConfigError("train.lr_dirs", "must be positive");
  if (!(lr_classifier > 0.0)) throw ConfigError("train.lr_classifier", "must be positive");
  if (!(max_norm > 0.0)) throw ConfigError("train.max_norm", "must be positive");
  const Index k = resolved_dirs_per_step();
  if (k < 2 || k > directions) throw ConfigError("train.dirs_per_step", "must lie in [2, directions]");
  if (classifier_hidden < 1) throw ConfigError("train.classifier_hidden", "must be >= 1");
  if (classifier_res < 1) throw ConfigError("train.classifier_res", "must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"directions", c.directions},
                     {"n_samples", c.n_samples},
                     {"lr_dirs", c.lr_dirs},
                     {"lr_classifier", c.lr_classifier},
                     {"weights", c.weights},
                     {"seed", c.seed},
                     {"max_norm", c.max_norm},
                     {"dirs_per_step", c.dirs_per_step},
                     {"classifier_hidden", c.classifier_hidden},
                     {"classifier_res", c.classifier_res}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("train.") + key, e.what());
    }
  };
  get("directions", d.directions);
  get("n_samples", d.n_samples);
  get("lr_dirs", d.lr_dirs);
  get("lr_classifier", d.lr_classifier);
  if (j.contains("weights")) {
    try {
      d.weights = j.at("weights").get<LossWeights>();
    } catch (const ConfigError& e) {
      throw ConfigError("train.weights." + e.field(), e.message());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train.weights", e.what());
    }
  }
  get("seed", d.seed);
  get("max_norm", d.max_norm);
  get("dirs_per_step", d.dirs_per_step);
  get("classifier_hidden", d.classifier_hidden);
  get("classifier_res", d.classifier_res);
  c = d;
}

StyleCode DirectionSet::direction(Index i) const {
  if (i < 0 || i >= size())
    throw IndexError("direction index " + std::to_string(i) + " out of range for M = " + std::to_string(size()));
  StyleCode d(layers, style_dim);
  Eigen::Map<Eigen::RowVectorXd>(d.data(), d.size()) = dirs.row(i);
  return d;
}

void check_compatible(const DirectionSet& set, const Generator& gen) {
  const GeneratorConfig& c = gen.config();
  if (set.layers != c.layers || set.style_dim != c.style_dim || set.dirs.cols() != c.code_size())
    throw ShapeError("direction set is " + std::to_string(set.layers) + " x " + std::to_string(set.style_dim) +
                     " (" + std::to_string(set.dirs.cols()) + " values per row) but the generator expects " +
                     std::to_string(c.layers) + " x " + std::to_string(c.style_dim) + " (" +
                     std::to_string(c.code_size()) + ")");
}

std::string dump_directions(const DirectionSet& set) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < set.dirs.rows(); ++r) {
    Eigen::RowVectorXd row = set.dirs.row(r);
    rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  nlohmann::json j{{"version", DirectionSet::kVersion},
                   {"mode", to_string(set.mode)},
                   {"L", set.layers},
                   {"D", set.style_dim},
                   {"M", set.dirs.rows()},
                   {"seed", set.generator_seed},
                   {"dirs", rows},
                   {"meta", set.meta}};
  return j.dump(1) + "\n";
}

DirectionSet parse_directions(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("direction file is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("version").get<int>();
    if (version != DirectionSet::kVersion)
      throw Error("direction file version " + std::to_string(version) + ", expected " +
                  std::to_string(DirectionSet::kVersion));
    DirectionSet set;
    set.mode = parse_edit_mode(j.at("mode").get<std::string>());
    set.layers = j.at("L").get<Index>();
    set.style_dim = j.at("D").get<Index>();
    const Index m = j.at("M").get<Index>();
    set.generator_seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("meta")) set.meta = j.at("meta");
    const auto& rows = j.at("dirs");
    if (Index(rows.size()) != m)
      throw ShapeError("direction file lists " + std::to_string(rows.size()) + " rows, M = " + std::to_string(m));
    const Index width = set.layers * set.style_dim;
    set.dirs.resize(m, width);
    for (Index r = 0; r < m; ++r) {
      const auto row = rows[r].get<std::vector<double>>();
      if (Index(row.size()) != width)
        throw ShapeError("direction row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                         " values, expected L*D = " + std::to_string(width));
      set.dirs.row(r) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), width);
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed direction file: ") + e.what());
  }
}

void save_directions(const std::filesystem::path& path, const DirectionSet& set) {
  write_file(path, dump_directions(set));
}

DirectionSet load_directions(const std::filesystem::path& path) { return parse_directions(read_file(path)); }

StyleCode apply_direction(const StyleCode& w_plus, const DirectionSet& set, Index i, double scale) {
  const StyleCode d = set.direction(i);
  if (w_plus.rows() != d.rows() || w_plus.cols() != d.cols())
    throw ShapeError("apply_direction: code is " + std::to_string(w_plus.rows()) + " x " +
                     std::to_string(w_plus.cols()) + ", direction is " + std::to_string(d.rows()) + " x " +
                     std::to_string(d.cols()));
  return w_plus + scale * d;
}

Classifier::Classifier(Index directions, Index hidden, Index input_res, std::uint64_t seed)
    : directions_(directions), hidden_(hidden), input_res_(input_res) {
  if (directions < 1 || hidden < 1 || input_res < 1) throw ConfigError("classifier", "sizes must be positive");
  auto rng = seeded_stream(seed, kTagClassifier);
  const Index in = input_size();
  w1_ = Tensor::parameter({hidden, in}, gaussian(rng, hidden * in, std::sqrt(2.0 / double(in))));
  b1_ = Tensor::parameter({hidden, 1}, Eigen::ArrayXd::Zero(hidden));
  // Small output weights start the softmax near uniform.
  w2_ = Tensor::parameter({directions, hidden}, gaussian(rng, directions * hidden, 0.01 / std::sqrt(double(hidden))));
  b2_ = Tensor::parameter({directions, 1}, Eigen::ArrayXd::Zero(directions));
}

nlohmann::json Classifier::to_json() const {
  return {{"version", 1},
          {"M", directions_},
          {"hidden", hidden_},
          {"input_res", input_res_},
          {"w1", array_json(w1_.value())},
          {"b1", array_json(b1_.value())},
          {"w2", array_json(w2_.value())},
          {"b2", array_json(b2_.value())}};
}

Classifier Classifier::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw Error("unsupported classifier version");
    Classifier c;
    c.directions_ = j.at("M").get<Index>();
    c.hidden_ = j.at("hidden").get<Index>();
    c.input_res_ = j.at("input_res").get<Index>();
    const Index in = c.input_size(), h = c.hidden_, m = c.directions_;
    c.w1_ = Tensor::parameter({h, in}, array_from_json(j.at("w1"), h * in, "w1"));
    c.b1_ = Tensor::parameter({h, 1}, array_from_json(j.at("b1"), h, "b1"));
    c.w2_ = Tensor::parameter({m, h}, array_from_json(j.at("w2"), m * h, "w2"));
    c.b2_ = Tensor::parameter({m, 1}, array_from_json(j.at("b2"), m, "b2"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed classifier file: ") + e.what());
  }
}

Tensor classify_pair(const Classifier& f, const Tensor& original, const Tensor& edited) {
  if (original.shape() != edited.shape())
    throw ShapeError("classify_pair: original " + to_string(original.shape()) + " vs edited " +
                     to_string(edited.shape()));
  if (original.rank() != 3 || original.dim(0) != 3)
    throw ShapeError("classify_pair expects [3, H, W], got " + to_string(original.shape()));
  const Index res = f.input_res_;
  const Index n = 3 * res * res;
  Tensor a = reshape(pool_to(original, res), {n}) - 0.5;
  Tensor b = reshape(pool_to(edited, res), {n}) - 0.5;
  Tensor x = reshape(concat({a, b}), {2 * n, 1});
  Tensor h = leaky_relu(matmul(f.w1_, x) + f.b1_, kLeak);
  return reshape(matmul(f.w2_, h) + f.b2_, {f.directions_});
}

void save_classifier(const std::filesystem::path& path, const Classifier& classifier) {
  write_file(path, classifier.to_json().dump() + "\n");
}

Classifier load_classifier(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return Classifier::from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("classifier file " + path.string() + " is not valid JSON: " + e.what());
  }
}

std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

DirectionSet initial_directions(const TrainConfig& cfg, const Generator& gen) {
  const GeneratorConfig& g = gen.config();
  DirectionSet set;
  set.mode = cfg.weights.mode;
  set.layers = g.layers;
  set.style_dim = g.style_dim;
  set.generator_seed = g.seed;
  set.dirs.resize(cfg.directions, g.code_size());
  auto rng = seeded_stream(cfg.seed, kTagDirections);
  for (Index r = 0; r < cfg.directions; ++r) {
    Eigen::ArrayXd row = gaussian(rng, g.code_size(), 1.0);
    set.dirs.row(r) = (row / std::sqrt(row.square().sum())).matrix().transpose();
  }
  nlohmann::json train = cfg;
  set.meta = {{"train_seed", cfg.seed}, {"config_hash", config_hash({{"train", train}, {"generator", g}})},
              {"steps", 0}};
  return set;
}

TrainResult train_directions(const TrainConfig& cfg, const Generator& gen, const Decomposer& decomposer,
                             const LossContext& context, const ProgressFn& progress) {
  cfg.validate();
  const GeneratorConfig& g = gen.config();
  const Index m = cfg.directions, width = g.code_size();
  const Index per_step = cfg.resolved_dirs_per_step();
  const LossWeights weights = cfg.weights.effective();

  TrainResult result;
  result.directions = initial_directions(cfg, gen);
  result.classifier = Classifier(m, cfg.classifier_hidden, cfg.classifier_res, cfg.seed);

  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> init = result.directions.dirs;
  Tensor dirs = Tensor::parameter({m, width}, Eigen::Map<const Eigen::ArrayXd>(init.data(), init.size()));
  Adam dir_opt({dirs}, AdamOptions{cfg.lr_dirs});
  Adam clf_opt(result.classifier.parameters(), AdamOptions{cfg.lr_classifier});

  auto latents = seeded_stream(cfg.seed, kTagLatents);
  auto subsets = seeded_stream(cfg.seed, kTagSubsets);
  std::vector<Index> order(static_cast<std::size_t>(m));

  for (Index step = 0; step < cfg.n_samples; ++step) {
    const LatentZ z = gen.sample_latent(latents);
    ++result.samples_drawn;
    const StyleCode w = map_latent(z, gen);
    const Tensor w_tensor = to_tensor(w);

    LossBatch batch;
    batch.original = synthesize(w, gen);
    batch.original_parts = decomposer.decompose(batch.original);

    // Partial Fisher-Yates: the first per_step entries form the subset.
    std::iota(order.begin(), order.end(), Index{0});
    for (Index k = 0; k < per_step; ++k) {
      std::uniform_int_distribution<Index> pick(k, m - 1);
      std::swap(order[k], order[pick(subsets)]);
    }
    for (Index k = 0; k < per_step; ++k) {
      EditTerm e;
      e.direction = order[k];
      const Tensor d = reshape(slice(dirs, e.direction, 1), {g.layers, g.style_dim});
      e.edited = synthesize(w_tensor + d, gen);
      e.parts = decomposer.decompose(e.edited);
      e.logits = classify_pair(result.classifier, batch.original.pixels, e.edited.pixels);
      batch.edits.push_back(std::move(e));
    }

    LossTerms terms;
    try {
      terms = total_loss(batch, weights, context);
    } catch (const NonFiniteError& err) {
      throw TrainingError(step, "non-finite value at step " + std::to_string(step) + ": " + err.what());
    }
    const LossReport report = terms.report();
    if (!std::isfinite(report.total)) {
      std::ostringstream os;
      os << "non-finite loss at step " << step << " (consistency " << report.consistency << ", perceptual "
         << report.perceptual << ", diversity " << report.diversity << ", distinction " << report.distinction
         << ", decorrelation " << report.decorrelation << ")";
      throw TrainingError(step, os.str());
    }

    dir_opt.zero_grad();
    clf_opt.zero_grad();
    backward(terms.total);
    dir_opt.step();
    clf_opt.step();
    project_rows(dirs.mutable_value(), m, width, cfg.max_norm);

    result.log.push_back(report);
    if (progress) progress(step, report);
  }

  result.directions.dirs = dirs.matrix();
  result.directions.meta["steps"] = cfg.n_samples;
  return result;
}

}  // namespace litsearch
