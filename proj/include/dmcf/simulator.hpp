#pragma once

#include <vector>

#include "dmcf/network.hpp"
#include "dmcf/state.hpp"

namespace dmcf {

struct SimulationConfig {
  double dt = 0.0025;
  std::vector<double> gravity{0.0, -9.81};
  double particle_radius = 0.005;

  void validate(int dim) const;
};

/// v' = v + dt g, x' = x + dt v' for fluid particles; boundary untouched.
/// The acceleration feature of every fluid particle becomes g.
ParticleState euler_predict(const ParticleState& state, const SimulationConfig& config);

/// One learned step: predict, correct fluid positions with the network and
/// recover velocities from the position change.
ParticleState step(const ParticleState& state, const ArchitectureConfig& arch,
                   const ModelParams& params, const SimulationConfig& config);

/// `steps` learned steps; the result holds steps + 1 frames starting with
/// `state0`. Throws SimulationDiverged before returning a non-finite frame.
std::vector<ParticleState> rollout(const ParticleState& state0, const ArchitectureConfig& arch,
                                   const ModelParams& params, const SimulationConfig& config,
                                   std::size_t steps);

namespace ad {

/// Fluid positions and velocities of a differentiable rollout.
struct FluidVars {
  Var positions;
  Var velocities;
};

/// Learned step on the tape, for backpropagation through time.
FluidVars step(Tape& t, const ArchitectureConfig& arch, std::span<const Var> params,
               const FluidVars& state, const SceneContext& scene, double dt);

}  // namespace ad

}  // namespace dmcf
