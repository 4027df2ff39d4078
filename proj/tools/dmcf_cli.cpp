#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "dmcf/check.hpp"
#include "dmcf/errors.hpp"
#include "dmcf/io.hpp"
#include "dmcf/layers.hpp"
#include "dmcf/metrics.hpp"
#include "dmcf/reference_sph.hpp"
#include "dmcf/run_config.hpp"
#include "dmcf/simulator.hpp"
#include "dmcf/training.hpp"

namespace fs = std::filesystem;
using namespace dmcf;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitInvariant = 3;

RunConfig config_or_default(const std::string& path, int dim) {
  return path.empty() ? default_run_config(dim) : load_run_config(path);
}

// Fluid rows kept when simulating at a reduced sampling ratio. Boundary
// rows are always kept.
std::vector<std::size_t> subsample_rows(const ParticleState& s, double ratio, std::uint64_t seed) {
  auto fluid = s.fluid_indices();
  const auto keep = static_cast<std::size_t>(std::max(1.0, std::round(ratio * fluid.size())));
  std::mt19937_64 rng(seed);
  std::shuffle(fluid.begin(), fluid.end(), rng);
  fluid.resize(std::min(keep, fluid.size()));
  std::sort(fluid.begin(), fluid.end());
  auto rows = fluid;
  for (auto b : s.boundary_indices()) rows.push_back(b);
  return rows;
}

ParticleState select_rows(const ParticleState& s, const std::vector<std::size_t>& rows) {
  ParticleState out;
  out.positions = gather(s.positions, rows);
  out.velocities = gather(s.velocities, rows);
  out.accelerations = gather(s.accelerations, rows);
  out.normals = gather(s.normals, rows);
  for (auto r : rows) {
    out.masses.push_back(s.masses[r]);
    out.types.push_back(s.types[r]);
  }
  return out;
}

int cmd_gen_data(const std::string& config_path, const std::string& out, const std::string& solver) {
  const RunConfig c = load_run_config(config_path);
  std::vector<Trajectory> scenes;
  std::string kind;
  switch (c.scene.kind) {
    case SceneKind::column:
      kind = "column";
      scenes = gen_column_dataset(c.scene.counts, c.scene.frames, c.solver);
      break;
    case SceneKind::freefall:
      kind = "freefall";
      scenes = gen_freefall_dataset(c.scene.counts, c.scene.height, c.scene.frames, c.solver);
      break;
    case SceneKind::drops2d: {
      kind = "drops2d";
      DropsSpec spec = c.scene.drops;
      spec.frames = c.scene.frames;
      scenes = gen_drops2d_dataset(spec, c.solver);
      break;
    }
  }
  if (solver == "explicit") {
    for (auto& t : scenes) {
      SolverConfig cfg = c.solver;
      cfg.gravity = t.gravity;
      const std::string name = t.name;
      t = simulate_reference(t.frames.front(), cfg, t.frames.size() - 1, SolverKind::explicit_wcsph);
      t.name = name;
    }
    kind += "_explicit";
  }
  write_dataset(out, scenes, kind, c.seed);
  std::cout << "wrote " << scenes.size() << " scenes to " << out << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& log_path, const std::string& init_path, int threads) {
  RunConfig c = load_run_config(config_path);
  c.train.threads = threads;
  std::vector<Trajectory> dataset;
  for (auto& t : read_dataset(data))
    if (std::find(c.holdout.begin(), c.holdout.end(), t.name) == c.holdout.end()) dataset.push_back(std::move(t));
  if (dataset.empty()) throw InputError("no training scenes left after holdout");
  if (dataset.front().dim() != c.arch.dim) throw InputError("dataset dimension does not match config dim");

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw InputError("cannot write " + log_path);
    log << "iteration,lr,rollout,warmup_max,loss,seconds\n";
  }
  TrainHooks hooks;
  hooks.log = [&](const TrainLogEntry& e) {
    std::cout << "it " << e.iteration << " loss " << e.loss << " lr " << e.lr << '\n';
    if (log) {
      log << e.iteration << ',' << e.lr << ',' << e.rollout << ',' << e.warmup_max << ',' << e.loss << ','
          << e.seconds << '\n';
      log.flush();
    }
  };
  hooks.checkpoint = [&](int it, const ModelParams& p) {
    write_checkpoint(out + ".it" + std::to_string(it), c.arch, p);
  };
  TrainResult result;
  if (init_path.empty()) {
    result = train(dataset, c.arch, c.train, hooks);
  } else {
    ArchitectureConfig arch;
    ModelParams init;
    read_checkpoint(init_path, arch, init);
    result = train_from(dataset, arch, c.train, std::move(init), hooks);
  }
  write_checkpoint(out, c.arch, result.params);
  if (result.skipped > 0) std::cerr << result.skipped << " diverged samples skipped\n";
  return 0;
}

int cmd_simulate(const std::string& ckpt, const std::string& initial, std::size_t frame_index,
                 std::size_t steps, const std::string& out, const std::string& config_path) {
  ArchitectureConfig arch;
  ModelParams params;
  read_checkpoint(ckpt, arch, params);
  const Trajectory source = read_trajectory(initial);
  if (frame_index >= source.frames.size()) throw InputError("initial frame index out of range");
  if (source.dim() != arch.dim) throw InputError("frame file and checkpoint differ in dimension");

  ParticleState start = source.frames[frame_index];
  if (!config_path.empty()) {
    const RunConfig c = load_run_config(config_path);
    if (c.eval_sampling_ratio < 1.0) {
      start = select_rows(start, subsample_rows(start, c.eval_sampling_ratio, c.seed));
      // Fewer neighbors per particle; scale kernels by the subsampling factor.
      for (std::size_t i = 0; i < params.names.size(); ++i) {
        const auto& n = params.names[i];
        if (n.ends_with(".kernel") || n.ends_with(".half"))
          for (double& v : params.tensors[i].storage()) v /= c.eval_sampling_ratio;
      }
    }
  }

  SimulationConfig sim;
  sim.dt = source.dt;
  sim.gravity = source.gravity;
  sim.particle_radius = source.particle_radius;
  Trajectory result{source.name, source.dt, source.particle_radius, source.gravity, {start}};
  for (std::size_t s = 0; s < steps; ++s) {
    ParticleState next;
    try {
      next = step(result.frames.back(), arch, params, sim);
      if (!next.positions.all_finite() || !next.velocities.all_finite()) throw SimulationDiverged(s, "non-finite state");
    } catch (const SimulationDiverged& e) {
      write_trajectory(out, result);
      std::cerr << "diverged at step " << s << "; wrote " << result.frames.size() << " frames\n";
      return kExitDiverged;
    }
    result.frames.push_back(std::move(next));
  }
  write_trajectory(out, result);
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& target_path, const std::string& out,
             const std::string& config_path) {
  Trajectory pred = read_trajectory(pred_path);
  Trajectory target = read_trajectory(target_path);
  const RunConfig c = config_or_default(config_path, std::max(1, target.dim()));
  if (pred.frames.size() > target.frames.size()) pred.frames.resize(target.frames.size());
  if (target.frames.size() > pred.frames.size()) target.frames.resize(pred.frames.size());
  if (pred.frames.empty()) throw InputError("no frames to compare");

  const auto pred_fluid = pred.frames.front().fluid_indices().size();
  const auto target_fluid = target.frames.front().fluid_indices().size();
  if (pred_fluid != target_fluid) {
    if (c.eval_sampling_ratio >= 1.0) throw InputError("prediction and target differ in particle count");
    const auto rows = subsample_rows(target.frames.front(), c.eval_sampling_ratio, c.seed);
    for (auto& f : target.frames) f = select_rows(f, rows);
    if (target.frames.front().fluid_indices().size() != pred_fluid)
      throw InputError("sampling ratio does not reproduce the prediction's particle count");
  }
  if (c.eval_noise_ratio > 0.0) {
    std::mt19937_64 rng(c.seed);
    for (auto& f : pred.frames) f = add_noise(f, c.eval_noise_ratio * pred.particle_radius, rng);
  }
  MetricsOptions options = c.metrics;
  options.density_support = c.solver.support_scale * target.particle_radius;
  const MetricsReport report = evaluate(pred, target, options);
  write_text(out + ".csv", report_csv(report));
  write_text(out + ".summary.txt", report_summary(report));
  std::cout << report_summary(report);
  return 0;
}

int cmd_check(bool corrupt) {
  testing::set_corrupt_mirror(corrupt);
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  for (const auto& r : run_invariant_checks()) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (seconds > 60.0) std::cerr << "warning: invariant suite took " << seconds << " s\n";
  return ok ? 0 : kExitInvariant;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Momentum-conserving learned particle fluids"};
  app.require_subcommand(0, 1);
  bool dump_defaults = false;
  int dump_dim = 2;
  int threads = 1;
  bool deterministic = false;
  app.add_flag("--dump-defaults", dump_defaults, "Print every config key with its default and exit");
  app.add_option("--dim", dump_dim, "Dimension for --dump-defaults")->check(CLI::Range(1, 3));
  app.add_option("--threads", threads, "Worker threads for batch members")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", deterministic, "Fixed reduction order (single thread)");

  std::string config, out, data, log_path, init, solver = "iterative";
  auto* gen = app.add_subcommand("gen-data", "Generate reference trajectories");
  gen->add_option("--config", config, "Run config")->required();
  gen->add_option("--out", out, "Dataset directory")->required();
  gen->add_option("--solver", solver, "iterative or explicit")->check(CLI::IsMember({"iterative", "explicit"}));

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Run config")->required();
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--log", log_path, "CSV training log");
  tr->add_option("--init", init, "Start from this checkpoint");

  std::string ckpt, initial;
  std::size_t frame_index = 0, steps = 100;
  auto* sim = app.add_subcommand("simulate", "Roll out a trained model");
  sim->add_option("--checkpoint", ckpt, "Checkpoint")->required();
  sim->add_option("--initial", initial, "Frame file holding the initial state")->required();
  sim->add_option("--frame", frame_index, "Initial frame index");
  sim->add_option("--steps", steps, "Number of steps");
  sim->add_option("--out", out, "Output frame file")->required();
  sim->add_option("--config", config, "Run config (eval.sampling_ratio)");

  std::string pred, target;
  auto* ev = app.add_subcommand("eval", "Compare a rollout with a reference");
  ev->add_option("--pred", pred, "Predicted frame file")->required();
  ev->add_option("--target", target, "Reference frame file")->required();
  ev->add_option("--out", out, "Output prefix for .csv and .summary.txt")->required();
  ev->add_option("--config", config, "Run config (eval.* keys)");

  bool corrupt = false;
  auto* chk = app.add_subcommand("check", "Run the fast invariant suite");
  chk->add_flag("--corrupt-mirror", corrupt, "Test hook: break the kernel mirror construction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitInput;
  }
  if (deterministic) threads = 1;

  try {
    if (dump_defaults) {
      std::cout << dump_run_config(default_run_config(dump_dim));
      return 0;
    }
    if (*gen) return cmd_gen_data(config, out, solver);
    if (*tr) return cmd_train(config, data, out, log_path, init, threads);
    if (*sim) return cmd_simulate(ckpt, initial, frame_index, steps, out, config);
    if (*ev) return cmd_eval(pred, target, out, config);
    if (*chk) return cmd_check(corrupt);
    std::cout << app.help();
    return 0;
  } catch (const SimulationDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
}
