#include "dmcf/training.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "dmcf/reference_sph.hpp"

namespace dmcf {

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (lr_decay_interval < 1 || lr_decay_start < 0) throw ConfigError("invalid learning-rate schedule");
  if (rollout_short < 1 || rollout_long < 1 || rollout_switch < 0)
    throw ConfigError("invalid rollout schedule");
  if (warmup_start < 0 || warmup_max < 0) throw ConfigError("invalid warmup schedule");
  if (!std::is_sorted(warmup_doubling.begin(), warmup_doubling.end()))
    throw ConfigError("warmup doubling points must be increasing");
  if (!(noise_ratio >= 0.0) || !(density_threshold >= 0.0))
    throw ConfigError("noise ratio and density threshold must be non-negative");
  if (log_interval < 1 || checkpoint_interval < 0 || threads < 1)
    throw ConfigError("invalid logging or thread settings");
}

double Schedules::learning_rate(int iteration) const {
  if (iteration < lr_decay_start) return lr0;
  const int halvings = (iteration - lr_decay_start) / lr_decay_interval + 1;
  return lr0 * std::ldexp(1.0, -halvings);
}

int Schedules::rollout_length(int iteration) const {
  return iteration < rollout_switch ? rollout_short : rollout_long;
}

int Schedules::warmup_limit(int iteration) const {
  if (!warmup || iteration < warmup_start) return 0;
  int w = warmup_max;
  for (int b : warmup_doubling)
    if (iteration >= b) w *= 2;
  return w;
}

Schedules make_schedules(const TrainConfig& config) {
  config.validate();
  const double f = static_cast<double>(config.iterations) / 50000.0;
  auto scaled = [f](int it) { return static_cast<int>(std::lround(it * f)); };
  Schedules s;
  s.lr0 = config.learning_rate;
  s.lr_decay_start = scaled(config.lr_decay_start);
  s.lr_decay_interval = std::max(1, scaled(config.lr_decay_interval));
  s.rollout_short = config.rollout_short;
  s.rollout_long = config.rollout_long;
  s.rollout_switch = scaled(config.rollout_switch);
  s.warmup = config.warmup;
  s.warmup_start = scaled(config.warmup_start);
  s.warmup_max = config.warmup_max;
  s.warmup_doubling.clear();
  for (int b : config.warmup_doubling) s.warmup_doubling.push_back(scaled(b));
  return s;
}

namespace {

std::vector<double> neighbor_weights(const Matrix& pred, double radius) {
  const std::size_t n = pred.rows();
  std::vector<double> w(n, 1.0);
  if (n == 0) return w;
  const NeighborList nb = fixed_radius_neighbors(pred, pred, radius);
  std::vector<double> c(n);
  double avg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    c[i] = static_cast<double>(nb.of(i).size()) - 1.0;
    avg += c[i];
  }
  avg /= static_cast<double>(n);
  if (avg > 0.0)
    for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(-c[i] / avg);
  return w;
}

void check_pair(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) throw InputError("prediction and target particle counts differ");
}

}  // namespace

double loss_frame(const Matrix& pred, const Matrix& target, double radius) {
  check_pair(pred, target);
  if (!(radius > 0.0)) throw InputError("loss radius must be positive");
  if (pred.rows() == 0) return 0.0;
  const auto w = neighbor_weights(pred, radius);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.rows(); ++i) {
    double l1 = 0.0;
    for (std::size_t a = 0; a < pred.cols(); ++a) l1 += std::abs(pred(i, a) - target(i, a));
    s += w[i] * l1;
  }
  return s / static_cast<double>(pred.rows());
}

double rollout_loss(const std::vector<Matrix>& pred, const std::vector<Matrix>& target,
                    double radius) {
  if (pred.size() != target.size()) throw InputError("rollout lengths differ");
  if (pred.empty()) throw InputError("rollout loss needs at least one frame");
  double s = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) s += loss_frame(pred[k], target[k], radius);
  return s / static_cast<double>(pred.size());
}

namespace ad {
Var loss_frame(Tape& t, Var pred, const Matrix& target, double radius) {
  const Matrix& p = t.value(pred);
  const double value = dmcf::loss_frame(p, target, radius);
  auto w = neighbor_weights(p, radius);
  return t.record(Matrix(1, 1, value), t.requires_grad(pred),
                  [pred, target, w = std::move(w)](Tape& tp, const Matrix& g) {
                    const Matrix& x = tp.value(pred);
                    Matrix& dst = tp.grad(pred);
                    const double s = g(0, 0) / static_cast<double>(x.rows());
                    for (std::size_t i = 0; i < x.rows(); ++i)
                      for (std::size_t a = 0; a < x.cols(); ++a) {
                        const double e = x(i, a) - target(i, a);
                        if (e != 0.0) dst(i, a) += s * w[i] * (e > 0.0 ? 1.0 : -1.0);
                      }
                  });
}
}  // namespace ad

ParticleState add_noise(const ParticleState& state, double std, std::mt19937_64& rng) {
  if (!(std >= 0.0)) throw InputError("noise std must be non-negative");
  ParticleState out = state;
  if (std == 0.0) return out;
  std::normal_distribution<double> normal(0.0, std);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.types[i] != ParticleType::fluid) continue;
    for (std::size_t a = 0; a < out.positions.cols(); ++a) out.positions(i, a) += normal(rng);
  }
  return out;
}

namespace {

double max_density(const ParticleState& s, double h) {
  const Matrix p = gather(s.positions, s.fluid_indices());
  const std::vector<double> m(p.rows(), 1.0);
  const auto rho = sph_density(p, m, h);
  return rho.empty() ? 0.0 : *std::max_element(rho.begin(), rho.end());
}

SimulationConfig sim_config(const Trajectory& scene) {
  SimulationConfig c;
  c.dt = scene.dt;
  c.gravity = scene.gravity;
  c.particle_radius = scene.particle_radius;
  return c;
}

}  // namespace

WarmupResult warmup(const Trajectory& scene, std::size_t start, const ArchitectureConfig& arch,
                    const ModelParams& params, std::size_t steps, double threshold,
                    double density_support) {
  if (start + steps >= scene.frames.size())
    throw InputError("scene too short for the requested warmup");
  WarmupResult r;
  r.state = scene.frames[start];
  r.index = start;
  const SimulationConfig sim = sim_config(scene);
  for (std::size_t k = 0; k < steps; ++k) {
    ParticleState next = step(r.state, arch, params, sim);
    if (!next.positions.all_finite() || !next.velocities.all_finite()) {
      r.stopped_early = true;
      break;
    }
    const double target = max_density(scene.frames[r.index + 1], density_support);
    const double e = target > 0.0 ? std::abs(1.0 - max_density(next, density_support) / target) : 0.0;
    r.errors.push_back(e);
    if (e > threshold) {
      r.stopped_early = true;
      break;
    }
    r.state = std::move(next);
    ++r.index;
    ++r.steps;
  }
  return r;
}

OptimizerState make_optimizer(const ModelParams& params) {
  OptimizerState s;
  for (const auto& t : params.tensors) {
    s.m.emplace_back(t.rows(), t.cols());
    s.v.emplace_back(t.rows(), t.cols());
  }
  return s;
}

void adam_step(ModelParams& params, const std::vector<Matrix>& grads, OptimizerState& state,
               double lr, double beta1, double beta2, double epsilon) {
  if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size())
    throw InputError("gradient list does not match the parameters");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!grads[k].same_shape(params.tensors[k])) throw InputError("gradient shape mismatch");
    if (!grads[k].all_finite()) throw OptimizerError("non-finite gradient in " + params.names[k]);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    double* p = params.tensors[k].data();
    double* m = state.m[k].data();
    double* v = state.v[k].data();
    const double* g = grads[k].data();
    for (std::size_t i = 0; i < grads[k].size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
    }
  }
}

RolloutLoss rollout_loss_grad(const ArchitectureConfig& arch, const ModelParams& params,
                              const ParticleState& start, const std::vector<Matrix>& targets,
                              std::span<const double> gravity, double dt, bool with_grad) {
  if (targets.empty()) throw InputError("rollout loss needs at least one target frame");
  ad::Tape t(with_grad);
  const auto pv = ad::register_params(t, params, with_grad);
  const auto fi = start.fluid_indices();
  const std::size_t d = static_cast<std::size_t>(arch.dim);
  Matrix fp = fi.empty() ? Matrix(0, d) : gather(start.positions, fi);
  Matrix fv = fi.empty() ? Matrix(0, d) : gather(start.velocities, fi);
  const SceneContext scene = scene_context(start, gravity);
  ad::FluidVars s{t.constant(fp), t.constant(fv)};
  std::vector<ad::Var> losses;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    s = ad::step(t, arch, pv, s, scene, dt);
    if (!t.value(s.positions).all_finite() || !t.value(s.velocities).all_finite())
      throw SimulationDiverged(k + 1, "training rollout produced non-finite values");
    losses.push_back(ad::loss_frame(t, s.positions, targets[k], arch.base_radius()));
  }
  const ad::Var total = ad::scale(t, ad::add_n(t, losses), 1.0 / static_cast<double>(losses.size()));
  RolloutLoss r;
  r.loss = t.value(total)(0, 0);
  if (with_grad) {
    t.backward(total);
    for (const auto& v : pv) r.grads.push_back(t.grad(v));
  }
  return r;
}

namespace {

struct SampleJob {
  const Trajectory* scene = nullptr;
  std::size_t start = 0;
  std::size_t warmup_steps = 0;
  int rollout = 0;
  std::uint64_t noise_seed = 0;
  // outputs
  bool ok = false;
  RolloutLoss result;
};

void run_sample(SampleJob& job, const ArchitectureConfig& arch, const ModelParams& params,
                const TrainConfig& config) {
  const Trajectory& sc = *job.scene;
  ParticleState state = sc.frames[job.start];
  std::size_t index = job.start;
  if (job.warmup_steps > 0) {
    const WarmupResult w = warmup(sc, job.start, arch, params, job.warmup_steps,
                                  config.density_threshold, 4.0 * sc.particle_radius);
    state = w.state;
    index = w.index;
  }
  std::mt19937_64 rng(job.noise_seed);
  state = add_noise(state, config.noise_ratio * sc.particle_radius, rng);
  std::vector<Matrix> targets;
  for (int k = 1; k <= job.rollout; ++k) {
    const auto& f = sc.frames[index + static_cast<std::size_t>(k)];
    targets.push_back(gather(f.positions, f.fluid_indices()));
  }
  try {
    job.result = rollout_loss_grad(arch, params, state, targets, sc.gravity, sc.dt, true);
    job.ok = true;
  } catch (const SimulationDiverged&) {
    job.ok = false;
  }
}

}  // namespace

TrainResult train(const std::vector<Trajectory>& dataset, const ArchitectureConfig& arch,
                  const TrainConfig& config, const TrainHooks& hooks) {
  return train_from(dataset, arch, config, init_params(arch, config.seed), hooks);
}

TrainResult train_from(const std::vector<Trajectory>& dataset, const ArchitectureConfig& arch,
                       const TrainConfig& config, ModelParams init, const TrainHooks& hooks) {
  config.validate();
  arch.validate();
  if (dataset.empty()) throw InputError("training needs at least one scene");
  for (const auto& s : dataset)
    if (s.dim() != arch.dim) throw InputError("scene dimension does not match the architecture");
  const Schedules sched = make_schedules(config);
  TrainResult out;
  out.params = std::move(init);
  OptimizerState opt = make_optimizer(out.params);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto t0 = std::chrono::steady_clock::now();
  double loss_acc = 0.0;
  int loss_count = 0;

  for (int it = 0; it < config.iterations; ++it) {
    const int T = sched.rollout_length(it);
    const int wlim = sched.warmup_limit(it);
    std::vector<SampleJob> jobs(static_cast<std::size_t>(config.batch_size));
    for (auto& job : jobs) {
      job.scene = &dataset[std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(rng)];
      job.warmup_steps = wlim > 0 ? std::uniform_int_distribution<int>(0, wlim - 1)(rng) : 0;
      job.rollout = T;
      const std::size_t frames = job.scene->frames.size();
      const std::size_t need = job.warmup_steps + static_cast<std::size_t>(T);
      if (frames <= need) {
        job.warmup_steps = 0;
        job.rollout = std::min<int>(T, static_cast<int>(frames) - 1);
      }
      const std::size_t last = frames - 1 - job.warmup_steps - static_cast<std::size_t>(job.rollout);
      job.start = std::uniform_int_distribution<std::size_t>(0, last)(rng);
      job.noise_seed = rng();
    }
    if (config.threads > 1 && jobs.size() > 1) {
      std::vector<std::thread> workers;
      for (auto& job : jobs)
        workers.emplace_back([&job, &arch, &out, &config] { run_sample(job, arch, out.params, config); });
      for (auto& w : workers) w.join();
    } else {
      for (auto& job : jobs) run_sample(job, arch, out.params, config);
    }

    std::vector<Matrix> grads;
    double batch_loss = 0.0;
    int ok = 0;
    for (auto& job : jobs) {
      if (!job.ok) continue;
      if (grads.empty()) {
        grads = job.result.grads;
      } else {
        for (std::size_t k = 0; k < grads.size(); ++k)
          for (std::size_t i = 0; i < grads[k].size(); ++i)
            grads[k].data()[i] += job.result.grads[k].data()[i];
      }
      batch_loss += job.result.loss;
      ++ok;
    }
    if (ok == 0) {
      ++out.skipped;
      continue;
    }
    for (auto& g : grads)
      for (double& x : g.storage()) x /= ok;
    batch_loss /= ok;
    try {
      adam_step(out.params, grads, opt, sched.learning_rate(it), config.adam_beta1,
                config.adam_beta2, config.adam_epsilon);
    } catch (const OptimizerError&) {
      ++out.skipped;
      continue;
    }
    loss_acc += batch_loss;
    ++loss_count;
    if ((it + 1) % config.log_interval == 0 || it + 1 == config.iterations) {
      TrainLogEntry e;
      e.iteration = it + 1;
      e.lr = sched.learning_rate(it);
      e.rollout = T;
      e.warmup_max = wlim;
      e.loss = loss_count ? loss_acc / loss_count : 0.0;
      e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.log.push_back(e);
      if (hooks.log) hooks.log(e);
      loss_acc = 0.0;
      loss_count = 0;
    }
    if (hooks.checkpoint && config.checkpoint_interval > 0 && (it + 1) % config.checkpoint_interval == 0)
      hooks.checkpoint(it + 1, out.params);
  }
  return out;
}

}  // namespace dmcf
