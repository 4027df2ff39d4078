#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

#include "dmcf/network.hpp"
#include "dmcf/simulator.hpp"

namespace dmcf {

struct TrainConfig {
  int iterations = 50000;
  int batch_size = 2;
  double learning_rate = 1e-3;
  int lr_decay_start = 20000;
  int lr_decay_interval = 5000;
  int rollout_short = 3;
  int rollout_long = 5;
  int rollout_switch = 15000;
  bool warmup = true;
  int warmup_start = 10000;
  int warmup_max = 5;
  std::vector<int> warmup_doubling{20000, 30000};
  double noise_ratio = 0.1;  // std of position noise as a fraction of r
  double density_threshold = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;
  int log_interval = 100;
  int checkpoint_interval = 0;  // 0: no periodic checkpoints
  int threads = 1;

  void validate() const;
};

/// Breakpoints of every schedule. The defaults describe a 50k-iteration run;
/// for other budgets breakpoints scale by iterations / 50000 while the
/// warmup length itself stays unscaled.
struct Schedules {
  double lr0 = 1e-3;
  int lr_decay_start = 20000;
  int lr_decay_interval = 5000;
  int rollout_short = 3;
  int rollout_long = 5;
  int rollout_switch = 15000;
  bool warmup = true;
  int warmup_start = 10000;
  int warmup_max = 5;
  std::vector<int> warmup_doubling{20000, 30000};

  double learning_rate(int iteration) const;
  int rollout_length(int iteration) const;
  /// Upper bound (exclusive) of the warmup step draw; 0 when disabled.
  int warmup_limit(int iteration) const;
};

Schedules make_schedules(const TrainConfig& config);

/// Mean over particles of exp(-c_i / c_avg) * |pred_i - target_i|_1 with c_i
/// the neighbor count (self excluded) of predicted particle i within radius.
double loss_frame(const Matrix& pred, const Matrix& target, double radius);
double rollout_loss(const std::vector<Matrix>& pred, const std::vector<Matrix>& target,
                    double radius);

namespace ad {
/// loss_frame on the tape; the neighbor weights are held constant.
Var loss_frame(Tape& t, Var pred, const Matrix& target, double radius);
}  // namespace ad

/// i.i.d. Gaussian noise on fluid positions.
ParticleState add_noise(const ParticleState& state, double std, std::mt19937_64& rng);

struct WarmupResult {
  ParticleState state;
  std::size_t index = 0;  // trajectory frame the state corresponds to
  std::size_t steps = 0;
  bool stopped_early = false;
  std::vector<double> errors;  // density error after every simulated step
};

/// Runs up to `steps` learned steps from frame `start` without gradients,
/// stopping (and discarding the offending step) once the max-density error
/// against the ground truth exceeds `threshold`.
WarmupResult warmup(const Trajectory& scene, std::size_t start, const ArchitectureConfig& arch,
                    const ModelParams& params, std::size_t steps, double threshold,
                    double density_support);

struct OptimizerState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

OptimizerState make_optimizer(const ModelParams& params);

/// Bias-corrected Adam update. Throws OptimizerError (params untouched)
/// on non-finite gradients.
void adam_step(ModelParams& params, const std::vector<Matrix>& grads, OptimizerState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

struct RolloutLoss {
  double loss = 0.0;
  std::vector<Matrix> grads;  // empty unless requested
};

/// Rollout of targets.size() learned steps from `start` (positions and
/// velocities of fluid rows), loss averaged over the produced frames.
RolloutLoss rollout_loss_grad(const ArchitectureConfig& arch, const ModelParams& params,
                              const ParticleState& start, const std::vector<Matrix>& targets,
                              std::span<const double> gravity, double dt, bool with_grad);

struct TrainLogEntry {
  int iteration = 0;
  double lr = 0.0;
  int rollout = 0;
  int warmup_max = 0;
  double loss = 0.0;
  double seconds = 0.0;
};

struct TrainHooks {
  std::function<void(int, const ModelParams&)> checkpoint;
  std::function<void(const TrainLogEntry&)> log;
};

struct TrainResult {
  ModelParams params;
  std::vector<TrainLogEntry> log;
  std::size_t skipped = 0;
};

TrainResult train(const std::vector<Trajectory>& dataset, const ArchitectureConfig& arch,
                  const TrainConfig& config, const TrainHooks& hooks = {});

/// Same as train but continuing from given parameters.
TrainResult train_from(const std::vector<Trajectory>& dataset, const ArchitectureConfig& arch,
                       const TrainConfig& config, ModelParams init, const TrainHooks& hooks = {});

}  // namespace dmcf
