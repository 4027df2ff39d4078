#include "dmcf/simulator.hpp"

namespace dmcf {

void SimulationConfig::validate(int dim) const {
  if (!(dt > 0.0)) throw ConfigError("time step must be positive");
  if (!(particle_radius > 0.0)) throw ConfigError("particle radius must be positive");
  if (gravity.size() != static_cast<std::size_t>(dim))
    throw ConfigError("gravity does not match the particle dimension");
}

ParticleState euler_predict(const ParticleState& state, const SimulationConfig& config) {
  config.validate(state.dim());
  ParticleState out = state;
  const std::size_t d = static_cast<std::size_t>(state.dim());
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state.types[i] != ParticleType::fluid) continue;
    for (std::size_t a = 0; a < d; ++a) {
      out.velocities(i, a) = state.velocities(i, a) + config.dt * config.gravity[a];
      out.positions(i, a) = state.positions(i, a) + config.dt * out.velocities(i, a);
      out.accelerations(i, a) = config.gravity[a];
    }
  }
  return out;
}

namespace {

ParticleState corrected(const ParticleState& predicted,
                        const Matrix& dx, const std::vector<std::size_t>& fluid, double dt) {
  ParticleState next = predicted;
  for (std::size_t r = 0; r < fluid.size(); ++r) {
    const std::size_t i = fluid[r];
    for (std::size_t a = 0; a < dx.cols(); ++a) {
      next.positions(i, a) = predicted.positions(i, a) + dx(r, a);
      // Same as (x_next - x) / dt, written so that dx = 0 reproduces v'.
      next.velocities(i, a) = predicted.velocities(i, a) + dx(r, a) / dt;
    }
  }
  return next;
}

bool finite_state(const ParticleState& s) {
  return s.positions.all_finite() && s.velocities.all_finite();
}

}  // namespace

ParticleState step(const ParticleState& state, const ArchitectureConfig& arch,
                   const ModelParams& params, const SimulationConfig& config) {
  const ParticleState predicted = euler_predict(state, config);
  const NetworkEval net = evaluate_network(arch, params, predicted, config.gravity);
  return corrected(predicted, net.fluid_dx, state.fluid_indices(), config.dt);
}

std::vector<ParticleState> rollout(const ParticleState& state0, const ArchitectureConfig& arch,
                                   const ModelParams& params, const SimulationConfig& config,
                                   std::size_t steps) {
  state0.validate();
  config.validate(state0.dim());
  std::vector<ParticleState> frames{state0};
  frames.reserve(steps + 1);
  for (std::size_t s = 1; s <= steps; ++s) {
    ParticleState next = step(frames.back(), arch, params, config);
    if (!finite_state(next)) throw SimulationDiverged(s, "learned rollout produced non-finite values");
    frames.push_back(std::move(next));
  }
  return frames;
}

namespace ad {

FluidVars step(Tape& t, const ArchitectureConfig& arch, std::span<const Var> params,
               const FluidVars& state, const SceneContext& scene, double dt) {
  std::vector<double> dv(scene.gravity);
  for (double& g : dv) g *= dt;
  const Var v_pred = add_row_constant(t, state.velocities, dv);
  const Var x_pred = axpby(t, 1.0, state.positions, dt, v_pred);
  const Var dx = network_forward(t, arch, params, x_pred, v_pred, scene);
  const Var x_next = add(t, x_pred, dx);
  const Var v_next = axpby(t, 1.0, v_pred, 1.0 / dt, dx);
  return {x_next, v_next};
}

}  // namespace ad

}  // namespace dmcf
