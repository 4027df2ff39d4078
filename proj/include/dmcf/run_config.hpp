#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dmcf/metrics.hpp"
#include "dmcf/network.hpp"
#include "dmcf/reference_sph.hpp"
#include "dmcf/training.hpp"

namespace dmcf {

enum class SceneKind { column, freefall, drops2d };

struct SceneConfig {
  SceneKind kind = SceneKind::column;
  std::vector<int> counts;  // column / freefall particle counts
  std::size_t frames = 100;
  double height = 0.01;  // free-fall lift
  DropsSpec drops;
};

/// Everything one CLI invocation needs, read from a flat key = value file.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string variant = "ours";
  ArchitectureConfig arch;
  TrainConfig train;
  SolverConfig solver;
  SceneConfig scene;
  std::vector<std::string> holdout;  // scene names excluded from training
  double eval_noise_ratio = 0.0;
  double eval_sampling_ratio = 1.0;
  MetricsOptions metrics;
};

/// Ablation variants, cumulative in this order:
/// base, ascc, multiscale_fps, voxelize, preprocess, ours; plus nosym
/// (ours with a plain CConv head).
const std::vector<std::string>& variant_names();
void apply_variant(const std::string& variant, ArchitectureConfig& arch, TrainConfig& train);

/// Defaults for a dimension (column scenes in 1D, drops in 2D).
RunConfig default_run_config(int dim);

/// Parses key = value lines ('#' starts a comment). Unknown keys and
/// malformed values raise ConfigError. `dim` and `variant` are applied
/// first so that explicit keys override their defaults.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its current value, one per line.
std::string dump_run_config(const RunConfig& config);

std::vector<int> parse_int_list(const std::string& text);

}  // namespace dmcf
