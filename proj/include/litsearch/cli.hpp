#pragma once

// Run configuration and the command-line front end. Every command is a pure
// function of the config file plus its flags.

#include "litsearch/dirsearch.hpp"
#include "litsearch/evalkit.hpp"
#include "litsearch/image_io.hpp"
#include "litsearch/losses.hpp"
#include "litsearch/scenegen.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace litsearch {

struct RenderConfig {
  Index grid_scenes = 4;
  Index interpolation_steps = 9;
  std::uint64_t scene_seed = 99;
};

struct RunConfig {
  GeneratorConfig generator;
  TrainConfig train;
  std::optional<LossSettings> loss;  // absent: LossSettings::for_resolution
  EvalConfig eval;
  RenderConfig render;
  std::string decomposer = "oracle";
  std::filesystem::path output_dir = "out";

  LossSettings loss_settings() const;
};

/// Parses and validates; ConfigError::field() is a dotted path such as
/// "train.directions".
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

void write_training_log(const std::filesystem::path& path, const std::vector<LossReport>& log);

/// Rows: original then one per direction; columns: scenes from `seed`.
Rgb8Image render_grid(const DirectionSet& set, const Generator& gen, Index n_scenes, std::uint64_t seed);

/// One row of interpolation frames for the first scene from `seed`.
Rgb8Image render_interpolation(const DirectionSet& set, const InterpolationPath& path, const Generator& gen,
                               std::uint64_t seed);

namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cli

}  // namespace litsearch
