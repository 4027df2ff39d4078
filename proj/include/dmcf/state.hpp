#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmcf/matrix.hpp"

namespace dmcf {

enum class ParticleType : std::uint8_t { fluid = 0, boundary = 1 };

/// All particles of a scene at one instant. Vector quantities are N x d.
/// Boundary particles are static and carry unit normals; fluid normals are
/// zero rows.
struct ParticleState {
  Matrix positions;
  Matrix velocities;
  Matrix accelerations;
  Matrix normals;
  std::vector<double> masses;
  std::vector<ParticleType> types;

  int dim() const { return static_cast<int>(positions.cols()); }
  std::size_t size() const { return positions.rows(); }
  std::vector<std::size_t> fluid_indices() const;
  std::vector<std::size_t> boundary_indices() const;

  /// Throws InputError on inconsistent shapes, non-finite values, moving
  /// boundary particles or non-unit normals.
  void validate() const;
};

/// New state with `fluid` rows of positions/velocities and `boundary` rows
/// of positions/normals; masses 1, accelerations zero.
ParticleState make_state(const Matrix& fluid_positions, const Matrix& fluid_velocities,
                         const Matrix& boundary_positions, const Matrix& boundary_normals);

/// One simulated scene: metadata plus every frame, initial frame first.
struct Trajectory {
  std::string name;
  double dt = 0.0025;
  double particle_radius = 0.005;
  std::vector<double> gravity;
  std::vector<ParticleState> frames;

  int dim() const { return frames.empty() ? 0 : frames.front().dim(); }
};

Matrix gather(const Matrix& m, const std::vector<std::size_t>& rows);
void scatter(Matrix& dst, const std::vector<std::size_t>& rows, const Matrix& src);

}  // namespace dmcf
