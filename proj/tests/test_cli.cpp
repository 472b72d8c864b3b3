#include "doctest.h"

#include "litsearch/cli.hpp"
#include "litsearch/errors.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace litsearch;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "litsearch");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(int(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "litsearch_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json tiny_config(const fs::path& out, Index resolution = 32) {
  return {{"generator", {{"resolution", resolution}}},
          {"train",
           {{"directions", 3}, {"n_samples", 3}, {"classifier_hidden", 16}, {"classifier_res", 8}}},
          {"eval",
           {{"n_consistency", 2},
            {"n_gram", 2},
            {"n_distinction", 2},
            {"n_decorrelation", 2},
            {"n_shift", 64},
            {"n_inversion", 1},
            {"inversion_restarts", 1},
            {"inversion_steps", 40}}},
          {"render", {{"grid_scenes", 2}, {"interpolation_steps", 3}}},
          {"output_dir", out.string()}};
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(1);
  return p;
}

}  // namespace

TEST_CASE("missing config exits 2 and names the path") {
  const Outcome o = run_cli({"train", "--config", "/nonexistent/run.json"});
  CHECK(o.code == cli::kExitUsage);
  CHECK(o.err.find("/nonexistent/run.json") != std::string::npos);
}

TEST_CASE("executable reports usage errors with exit code 2") {
  const std::string cmd = std::string(LITSEARCH_CLI_PATH) + " eval --config /nonexistent/run.json --dirs x.json 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 2);
  CHECK(WEXITSTATUS(std::system((std::string(LITSEARCH_CLI_PATH) + " --help >/dev/null").c_str())) == 0);
  CHECK(WEXITSTATUS(std::system((std::string(LITSEARCH_CLI_PATH) + " >/dev/null 2>&1").c_str())) == 2);
}

TEST_CASE("invalid field exits 2 with the dotted path") {
  const fs::path dir = fresh_dir("invalid");
  nlohmann::json j = tiny_config(dir);
  j["train"]["directions"] = 1;
  const Outcome o = run_cli({"train", "--config", write_config(dir, j).string()});
  CHECK(o.code == cli::kExitUsage);
  CHECK(o.err.find("train.directions") != std::string::npos);

  j = tiny_config(dir);
  j["eval"]["n_shift"] = 3;
  CHECK(run_cli({"train", "--config", write_config(dir, j).string()}).err.find("eval.n_shift") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{\"train\": ";
  const Outcome broken = run_cli({"train", "--config", (dir / "broken.json").string()});
  CHECK(broken.code == cli::kExitUsage);
  CHECK(broken.err.find("not valid JSON") != std::string::npos);

  const Outcome mode = run_cli({"train", "--config", write_config(dir, tiny_config(dir)).string(), "--mode", "x"});
  CHECK(mode.code == cli::kExitUsage);
  CHECK(mode.err.find("--mode") != std::string::npos);
}

TEST_CASE("zero samples writes the random initialisation") {
  const fs::path dir = fresh_dir("zero");
  nlohmann::json j = tiny_config(dir);
  j["train"]["n_samples"] = 0;
  const fs::path cfg_path = write_config(dir, j);
  const Outcome o = run_cli({"train", "--config", cfg_path.string()});
  REQUIRE(o.code == 0);
  const RunConfig cfg = load_run_config(cfg_path);
  const DirectionSet set = load_directions(dir / "directions.json");
  CHECK(set.dirs == initial_directions(cfg.train, Generator(cfg.generator)).dirs);
  CHECK(slurp(dir / "training_log.csv") == "step,consistency,perceptual,diversity,distinction,decorrelation,total\n");
}

TEST_CASE("render-grid size and tiles match direct synthesis") {
  const fs::path dir = fresh_dir("grid");
  nlohmann::json j = tiny_config(dir, 64);
  j["train"]["directions"] = 4;
  j["train"]["n_samples"] = 0;
  const fs::path cfg_path = write_config(dir, j);
  REQUIRE(run_cli({"train", "--config", cfg_path.string()}).code == 0);
  const fs::path ppm = dir / "grid.ppm";
  const Outcome o = run_cli(
      {"render-grid", "--config", cfg_path.string(), "--dirs", (dir / "directions.json").string(), "--n-scenes", "1"});
  REQUIRE(o.code == 0);
  const Rgb8Image grid = read_ppm(ppm);
  CHECK(grid.width == 64);
  CHECK(grid.height == 5 * 64 + 4 * 2);

  const RunConfig cfg = load_run_config(cfg_path);
  const Generator gen(cfg.generator);
  const DirectionSet set = load_directions(dir / "directions.json");
  const StyleCode w = sample_codes(gen, 1, cfg.render.scene_seed).front();
  for (Index row = 0; row < 5; ++row) {
    const StyleCode code = row == 0 ? w : apply_direction(w, set, row - 1);
    const Rgb8Image tile = to_rgb8(synthesize(code, gen).pixels);
    bool same = true;
    for (Index y = 0; y < 64; ++y)
      for (Index x = 0; x < 64; ++x)
        for (Index c = 0; c < 3; ++c) same = same && grid.at(x, row * 66 + y, c) == tile.at(x, y, c);
    CHECK(same);
  }

  const std::string first = slurp(ppm);
  REQUIRE(run_cli({"render-grid", "--config", cfg_path.string(), "--dirs", (dir / "directions.json").string(),
                   "--n-scenes", "1"})
              .code == 0);
  CHECK(slurp(ppm) == first);
}

TEST_CASE("shape mismatch and missing files exit 2") {
  const fs::path dir = fresh_dir("mismatch");
  const fs::path cfg_path = write_config(dir, tiny_config(dir));
  REQUIRE(run_cli({"train", "--config", cfg_path.string(), "--out", (dir / "a").string()}).code == 0);

  nlohmann::json wide = tiny_config(dir);
  wide["generator"]["style_dim"] = 48;
  const fs::path wide_dir = dir / "wide";
  fs::create_directories(wide_dir);
  const fs::path wide_cfg = write_config(wide_dir, wide);
  const Outcome o =
      run_cli({"render-grid", "--config", wide_cfg.string(), "--dirs", (dir / "a" / "directions.json").string()});
  CHECK(o.code == cli::kExitUsage);
  CHECK(o.err.find("directions.json") != std::string::npos);

  const Outcome missing = run_cli({"eval", "--config", cfg_path.string(), "--dirs", (dir / "none.json").string()});
  CHECK(missing.code == cli::kExitUsage);
  CHECK(missing.err.find("none.json") != std::string::npos);

  const Outcome interp = run_cli({"interpolate", "--config", cfg_path.string(), "--dirs",
                                  (dir / "a" / "directions.json").string(), "--i", "7"});
  CHECK(interp.code == cli::kExitUsage);
}

TEST_CASE("train, eval and render are reproducible and leave inputs untouched") {
  const fs::path dir = fresh_dir("repro");
  const fs::path cfg_path = write_config(dir, tiny_config(dir));
  const std::string cfg_bytes = slurp(cfg_path);

  auto pipeline = [&](const std::string& name) {
    const fs::path out = dir / name;
    REQUIRE(run_cli({"train", "--config", cfg_path.string(), "--out", out.string()}).code == 0);
    const std::string dirs = (out / "directions.json").string();
    const std::string dirs_bytes = slurp(dirs);
    const Outcome e = run_cli({"eval", "--config", cfg_path.string(), "--dirs", dirs, "--classifier",
                               (out / "classifier.json").string(), "--out", out.string()});
    REQUIRE(e.code == 0);
    CHECK(e.out.find("3_oracle_subspace_recovery: ") != std::string::npos);
    REQUIRE(run_cli({"render-grid", "--config", cfg_path.string(), "--dirs", dirs, "--out",
                     (out / "grid.ppm").string()})
                .code == 0);
    REQUIRE(run_cli({"interpolate", "--config", cfg_path.string(), "--dirs", dirs, "--path", "pair", "--i", "0",
                     "--j", "2", "--out", (out / "interp.ppm").string()})
                .code == 0);
    CHECK(slurp(dirs) == dirs_bytes);
    return out;
  };
  const fs::path a = pipeline("a"), b = pipeline("b");
  for (const char* f : {"directions.json", "classifier.json", "training_log.csv", "metrics.csv", "summary.json",
                        "grid.ppm", "interp.ppm"})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
  CHECK(slurp(cfg_path) == cfg_bytes);

  // Seven per-direction metrics, three directions each.
  const std::string csv = slurp(a / "metrics.csv");
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  std::istringstream rows(csv);
  std::string line;
  Index per_direction = 0, summary = 0;
  std::getline(rows, line);
  while (std::getline(rows, line)) (line.find(",all,") != std::string::npos ? summary : per_direction)++;
  CHECK(lines == 1 + per_direction + summary);
  CHECK(per_direction == 7 * 3);
  CHECK(summary > 0);

  const nlohmann::json s = nlohmann::json::parse(slurp(a / "summary.json"));
  CHECK(s["config_hash"].get<std::string>().size() == 16);
  CHECK(s["seeds"]["eval"] == 2024);

  const Rgb8Image strip = read_ppm(a / "interp.ppm");
  CHECK(strip.width == 3 * 32 + 2 * 2);
}
