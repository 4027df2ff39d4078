#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmcf/autodiff.hpp"
#include "dmcf/layers.hpp"
#include "dmcf/state.hpp"

namespace dmcf {

enum class HeadKind { ascc, cconv };
enum class Sampling { voxel, fps };

/// Branch topology and channel widths of the particle network.
///
/// The interaction radius of branch i is base_radius() * 2^i and its query
/// points come from voxels of edge base_radius()/2 * 2^i (branch 0 queries
/// the particles themselves).
struct ArchitectureConfig {
  int dim = 2;
  double particle_radius = 0.005;
  double radius_scale = 4.0;
  int branches = 4;
  int pre_channels = 8;
  std::vector<int> l1_channels{16, 8, 4, 4};
  /// One entry per branch-exchange layer, each listing per-branch widths.
  std::vector<std::vector<int>> exchange_channels{{32, 16, 8, 4}, {32, 16, 8, 4}};
  int l4_channels = 32;
  int kernel_size = 8;
  int head_kernel_size = 8;
  HeadKind head = HeadKind::ascc;
  Sampling sampling = Sampling::voxel;
  bool gravity_normalize = true;
  bool boundary_all_layers = true;
  double velocity_feature_scale = 1.0;
  double accel_feature_scale = 0.1;
  double output_scale = 1.0;

  double base_radius() const { return radius_scale * particle_radius; }
  double branch_radius(int branch) const;
  double voxel_size(int branch) const;
  void validate() const;
};

/// Defaults for the given dimension: the four-branch network for 2D/3D, the
/// reduced two-branch stack with output_scale 0.01 for 1D.
ArchitectureConfig default_architecture(int dim);

/// Trainable tensors, addressed by name and kept in a fixed order.
struct ModelParams {
  std::vector<std::string> names;
  std::vector<Matrix> tensors;

  std::size_t index_of(const std::string& name) const;
  const Matrix& at(const std::string& name) const { return tensors[index_of(name)]; }
  Matrix& at(const std::string& name) { return tensors[index_of(name)]; }
  std::size_t scalar_count() const;
};

struct TensorLayout {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool is_bias = false;
};

/// Names and shapes of every tensor, in storage order.
std::vector<TensorLayout> parameter_layout(const ArchitectureConfig& config);

/// Kernel weights uniform on [-0.05, 0.05] (sampled in single precision so
/// that checkpoints round-trip exactly), biases zero.
ModelParams init_params(const ArchitectureConfig& config, std::uint64_t seed);

/// Sets every output-head weight to zero.
void zero_head(const ArchitectureConfig& config, ModelParams& params);

/// Per-scene quantities that stay fixed during a rollout.
struct SceneContext {
  Matrix boundary_positions;
  Matrix boundary_normals;
  std::vector<double> gravity;
};

SceneContext scene_context(const ParticleState& state, std::span<const double> gravity);

/// Extra outputs of one forward call.
struct NetworkTrace {
  /// Raw head output over fluid followed by boundary particles, in the
  /// network's sorted canonical frame (before output_scale).
  ad::Var union_output;
  std::size_t fluid_count = 0;
};

namespace ad {
/// Registers params on the tape, as variables if `trainable`.
std::vector<Var> register_params(Tape& t, const ModelParams& params, bool trainable);
}  // namespace ad

/// Position correction for every fluid particle, N_fluid x d, rows in input
/// order. `fluid_positions`/`fluid_velocities` are the predicted state;
/// the acceleration feature is the scene gravity.
ad::Var network_forward(ad::Tape& t, const ArchitectureConfig& config,
                        std::span<const ad::Var> params, ad::Var fluid_positions,
                        ad::Var fluid_velocities, const SceneContext& scene,
                        NetworkTrace* trace = nullptr);

struct NetworkEval {
  Matrix fluid_dx;
  /// Scaled head output over fluid then boundary rows (sorted, canonical).
  Matrix union_output;
};

/// Inference-only evaluation on a full state (fluid rows picked by type).
NetworkEval evaluate_network(const ArchitectureConfig& config, const ModelParams& params,
                             const ParticleState& state, std::span<const double> gravity);

/// Gradient of <grad_dx, fluid_dx> with respect to every parameter tensor.
std::vector<Matrix> network_backward(const ArchitectureConfig& config,
                                     const ModelParams& params, const ParticleState& state,
                                     std::span<const double> gravity, const Matrix& grad_dx);

}  // namespace dmcf
