#include "litsearch/cli.hpp"

#include "litsearch/decomp.hpp"
#include "litsearch/errors.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

namespace litsearch {

namespace {

// Bad input the user can fix: exit code 2.
struct UsageError : Error {
  using Error::Error;
};

template <typename Fn>
void section(const nlohmann::json& j, const char* name, Fn&& fn) {
  if (!j.contains(name)) return;
  try {
    fn(j.at(name));
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(name, e.what());
  } catch (const Error& e) {
    throw ConfigError(name, e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

DirectionSet load_checked(const std::filesystem::path& path, const Generator& gen) {
  if (!std::filesystem::exists(path)) throw UsageError("direction file not found: " + path.string());
  DirectionSet set;
  try {
    set = load_directions(path);
    check_compatible(set, gen);
  } catch (const Error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return set;
}

Classifier load_classifier_checked(const std::filesystem::path& path, const DirectionSet& set) {
  if (!std::filesystem::exists(path)) throw UsageError("classifier file not found: " + path.string());
  Classifier c;
  try {
    c = load_classifier(path);
  } catch (const Error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  if (c.directions() != set.size())
    throw UsageError(path.string() + ": classifier predicts " + std::to_string(c.directions()) +
                     " directions, the set has " + std::to_string(set.size()));
  return c;
}

std::filesystem::path ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

}  // namespace

LossSettings RunConfig::loss_settings() const {
  return loss ? *loss : LossSettings::for_resolution(generator.resolution);
}

RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "run config must be a JSON object");
  RunConfig c;
  section(j, "generator", [&](const nlohmann::json& s) { c.generator = s.get<GeneratorConfig>(); });
  section(j, "train", [&](const nlohmann::json& s) { c.train = s.get<TrainConfig>(); });
  section(j, "loss", [&](const nlohmann::json& s) {
    LossSettings base = LossSettings::for_resolution(c.generator.resolution);
    from_json(s, base);
    c.loss = base;
  });
  section(j, "eval", [&](const nlohmann::json& s) { c.eval = s.get<EvalConfig>(); });
  section(j, "render", [&](const nlohmann::json& s) {
    c.render.grid_scenes = s.value("grid_scenes", c.render.grid_scenes);
    c.render.interpolation_steps = s.value("interpolation_steps", c.render.interpolation_steps);
    c.render.scene_seed = s.value("scene_seed", c.render.scene_seed);
  });
  if (j.contains("decomposer")) {
    if (!j.at("decomposer").is_string()) throw ConfigError("decomposer", "must be a string");
    c.decomposer = j.at("decomposer").get<std::string>();
  }
  if (j.contains("output_dir")) {
    if (!j.at("output_dir").is_string()) throw ConfigError("output_dir", "must be a string");
    c.output_dir = j.at("output_dir").get<std::string>();
  }

  Generator probe(c.generator);  // validates generator.*
  c.train.validate();
  make_decomposer(c.decomposer, c.generator.resolution);
  if (c.render.grid_scenes < 1) throw ConfigError("render.grid_scenes", "must be >= 1");
  if (c.render.interpolation_steps < 2) throw ConfigError("render.interpolation_steps", "must be >= 2");
  const Index res = c.generator.resolution;
  if (res % c.train.classifier_res != 0 || ((res / c.train.classifier_res) & (res / c.train.classifier_res - 1)))
    throw ConfigError("train.classifier_res", "resolution / classifier_res must be a power of two");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("--config", path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"generator", c.generator},
          {"train", c.train},
          {"loss", c.loss_settings()},
          {"eval", c.eval},
          {"render",
           {{"grid_scenes", c.render.grid_scenes},
            {"interpolation_steps", c.render.interpolation_steps},
            {"scene_seed", c.render.scene_seed}}},
          {"decomposer", c.decomposer},
          {"output_dir", c.output_dir.string()}};
}

void write_training_log(const std::filesystem::path& path, const std::vector<LossReport>& log) {
  std::ostringstream os;
  os << "step,consistency,perceptual,diversity,distinction,decorrelation,total\n";
  for (std::size_t s = 0; s < log.size(); ++s) {
    const LossReport& r = log[s];
    os << s << ',' << format_double(r.consistency) << ',' << format_double(r.perceptual) << ','
       << format_double(r.diversity) << ',' << format_double(r.distinction) << ',' << format_double(r.decorrelation)
       << ',' << format_double(r.total) << '\n';
  }
  write_text(path, os.str());
}

Rgb8Image render_grid(const DirectionSet& set, const Generator& gen, Index n_scenes, std::uint64_t seed) {
  check_compatible(set, gen);
  const auto codes = sample_codes(gen, n_scenes, seed);
  std::vector<std::vector<Tensor>> rows(std::size_t(set.size() + 1));
  for (const StyleCode& w : codes) {
    rows[0].push_back(synthesize(w, gen).pixels);
    for (Index i = 0; i < set.size(); ++i)
      rows[std::size_t(i + 1)].push_back(synthesize(apply_direction(w, set, i), gen).pixels);
  }
  return compose_grid(rows);
}

Rgb8Image render_interpolation(const DirectionSet& set, const InterpolationPath& path, const Generator& gen,
                               std::uint64_t seed) {
  const StyleCode w = sample_codes(gen, 1, seed).front();
  std::vector<Tensor> frames;
  for (const SceneImage& img : interpolate(set, path, gen, w)) frames.push_back(img.pixels);
  return compose_grid({frames});
}

namespace cli {

namespace {

struct Options {
  std::string config;
  std::string mode;
  std::string out;
  std::string dirs;
  std::string classifier;
  std::string recolor_dirs;
  std::string recolor_classifier;
  std::string ablation_dirs;
  std::string path = "scale";
  Index n_scenes = 0;
  Index steps = 0;
  Index i = 0;
  Index j = -1;
};

int cmd_train(const Options& o, std::ostream& out) {
  RunConfig cfg = load_run_config(o.config);
  if (!o.mode.empty()) {
    try {
      cfg.train.weights.mode = parse_edit_mode(o.mode);
    } catch (const ConfigError& e) {
      throw ConfigError("--mode", e.message());
    }
  }
  const std::filesystem::path dir = ensure_dir(o.out.empty() ? cfg.output_dir : std::filesystem::path(o.out));
  const Generator gen(cfg.generator);
  const auto decomposer = make_decomposer(cfg.decomposer, cfg.generator.resolution);
  const LossContext context(cfg.loss_settings());
  const Index every = std::max<Index>(1, cfg.train.n_samples / 8);
  const TrainResult result = train_directions(cfg.train, gen, *decomposer, context, [&](Index step, const LossReport& r) {
    if (step % every == 0 || step + 1 == cfg.train.n_samples)
      out << "step " << step << " total " << r.total << " (consistency " << r.consistency << ", perceptual "
          << r.perceptual << ", diversity " << r.diversity << ", distinction " << r.distinction << ", decorrelation "
          << r.decorrelation << ")\n";
  });
  save_directions(dir / "directions.json", result.directions);
  save_classifier(dir / "classifier.json", result.classifier);
  write_training_log(dir / "training_log.csv", result.log);
  out << "wrote " << (dir / "directions.json").string() << ", classifier.json, training_log.csv ("
      << result.samples_drawn << " samples, mode " << to_string(result.directions.mode) << ")\n";
  return kExitOk;
}

int cmd_render_grid(const Options& o, std::ostream& out) {
  const RunConfig cfg = load_run_config(o.config);
  const Generator gen(cfg.generator);
  const DirectionSet set = load_checked(o.dirs, gen);
  const Index k = o.n_scenes > 0 ? o.n_scenes : cfg.render.grid_scenes;
  const std::filesystem::path file = o.out.empty() ? ensure_dir(cfg.output_dir) / "grid.ppm" : std::filesystem::path(o.out);
  const Rgb8Image grid = render_grid(set, gen, k, cfg.render.scene_seed);
  write_ppm(file, grid);
  out << "wrote " << file.string() << " (" << grid.width << " x " << grid.height << ")\n";
  return kExitOk;
}

int cmd_interpolate(const Options& o, std::ostream& out) {
  const RunConfig cfg = load_run_config(o.config);
  const Generator gen(cfg.generator);
  const DirectionSet set = load_checked(o.dirs, gen);
  InterpolationPath path;
  if (o.path == "scale") {
    path.kind = PathKind::Scale;
  } else if (o.path == "pair") {
    path.kind = PathKind::Pair;
    if (o.j < 0) throw UsageError("--path pair requires --j");
  } else {
    throw UsageError("--path must be scale or pair");
  }
  path.i = o.i;
  path.j = o.j < 0 ? o.i : o.j;
  path.n_steps = o.steps > 0 ? o.steps : cfg.render.interpolation_steps;
  if (path.i >= set.size() || path.j >= set.size() || path.i < 0)
    throw UsageError("direction index out of range for M = " + std::to_string(set.size()));
  const std::filesystem::path file =
      o.out.empty() ? ensure_dir(cfg.output_dir) / "interpolation.ppm" : std::filesystem::path(o.out);
  const Rgb8Image strip = render_interpolation(set, path, gen, cfg.render.scene_seed);
  write_ppm(file, strip);
  out << "wrote " << file.string() << " (" << strip.width << " x " << strip.height << ")\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig cfg = load_run_config(o.config);
  const Generator gen(cfg.generator);
  const DirectionSet relight = load_checked(o.dirs, gen);
  if (relight.mode != EditMode::Relight) throw UsageError("--dirs must be a relight set; pass recolor sets via --recolor-dirs");
  std::optional<Classifier> classifier, recolor_classifier;
  std::optional<DirectionSet> recolor, ablation;
  if (!o.classifier.empty()) classifier = load_classifier_checked(o.classifier, relight);
  if (!o.recolor_dirs.empty()) {
    recolor = load_checked(o.recolor_dirs, gen);
    if (recolor->mode != EditMode::Recolor) throw UsageError("--recolor-dirs must be a recolor set");
  }
  if (!o.recolor_classifier.empty()) {
    if (!recolor) throw UsageError("--recolor-classifier requires --recolor-dirs");
    recolor_classifier = load_classifier_checked(o.recolor_classifier, *recolor);
  }
  if (!o.ablation_dirs.empty()) ablation = load_checked(o.ablation_dirs, gen);

  const std::filesystem::path dir = ensure_dir(o.out.empty() ? cfg.output_dir : std::filesystem::path(o.out));
  const LossContext context(cfg.loss_settings());
  EvalInputs in;
  in.relight = &relight;
  in.classifier = classifier ? &*classifier : nullptr;
  in.recolor = recolor ? &*recolor : nullptr;
  in.recolor_classifier = recolor_classifier ? &*recolor_classifier : nullptr;
  in.ablation = ablation ? &*ablation : nullptr;
  const MetricReport report = evaluate(in, gen, context, cfg.eval);

  write_text(dir / "metrics.csv", report.to_csv());
  nlohmann::json summary = report.to_json();
  summary["config_hash"] = config_hash(to_json(cfg));
  write_text(dir / "summary.json", summary.dump(1) + "\n");
  for (const auto& [name, pass] : report.criteria.items())
    out << name << ": " << (pass.get<bool>() ? "pass" : "fail") << "\n";
  out << "wrote " << (dir / "metrics.csv").string() << " and summary.json\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Search, render and evaluate lighting directions in a toy generator's style space", "litsearch"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Train a direction set and its classifier");
  train->add_option("--config", o.config, "Run config JSON")->required();
  train->add_option("--mode", o.mode, "relight or recolor (overrides the config)");
  train->add_option("--out", o.out, "Output directory (default: output_dir)");

  auto* grid = app.add_subcommand("render-grid", "Render originals and every edit as a PPM grid");
  grid->add_option("--config", o.config, "Run config JSON")->required();
  grid->add_option("--dirs", o.dirs, "directions.json")->required();
  grid->add_option("--n-scenes", o.n_scenes, "Columns (default: render.grid_scenes)");
  grid->add_option("--out", o.out, "Output PPM (default: output_dir/grid.ppm)");

  auto* interp = app.add_subcommand("interpolate", "Render an interpolation strip as PPM");
  interp->add_option("--config", o.config, "Run config JSON")->required();
  interp->add_option("--dirs", o.dirs, "directions.json")->required();
  interp->add_option("--path", o.path, "scale or pair");
  interp->add_option("--i", o.i, "Direction index")->required();
  interp->add_option("--j", o.j, "Second direction for --path pair");
  interp->add_option("--steps", o.steps, "Frames (default: render.interpolation_steps)");
  interp->add_option("--out", o.out, "Output PPM (default: output_dir/interpolation.ppm)");

  auto* eval = app.add_subcommand("eval", "Run the metric battery and write metrics.csv + summary.json");
  eval->add_option("--config", o.config, "Run config JSON")->required();
  eval->add_option("--dirs", o.dirs, "Relight directions.json")->required();
  eval->add_option("--classifier", o.classifier, "Classifier trained with --dirs");
  eval->add_option("--recolor-dirs", o.recolor_dirs, "Recolor directions.json");
  eval->add_option("--recolor-classifier", o.recolor_classifier, "Classifier trained with --recolor-dirs");
  eval->add_option("--ablation-dirs", o.ablation_dirs, "Relight set trained with decorrelation weight 0");
  eval->add_option("--out", o.out, "Output directory (default: output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(o, out);
    if (grid->parsed()) return cmd_render_grid(o, out);
    if (interp->parsed()) return cmd_interpolate(o, out);
    return cmd_eval(o, out);
  } catch (const ConfigError& e) {
    err << "config error at " << e.field() << ": " << e.message() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingError& e) {
    err << "training aborted: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace cli

}  // namespace litsearch
