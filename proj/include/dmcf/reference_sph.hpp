#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dmcf/state.hpp"

namespace dmcf {

struct SolverConfig {
  double particle_radius = 0.005;
  double support_scale = 4.0;  // h = support_scale * particle_radius
  double frame_dt = 0.0025;
  double explicit_dt = 0.00025;
  double stiffness = 10.0;
  double viscosity = 1e-4;
  double rest_density = 0.0;  // <= 0: calibrated from the rest lattice
  double tolerance = 0.01;
  int max_iterations = 500;
  double relaxation = 0.5;
  std::vector<double> gravity{-9.81};

  double support() const { return support_scale * particle_radius; }
  double spacing() const { return 2.0 * particle_radius; }
  void validate(int dim) const;
};

/// Normalization of W(r) = C (h^2 - r^2)^3 in d dimensions.
double poly6_constant(int dim, double h);
double poly6_kernel(int dim, double r, double h);
/// Normalization of W(r) = C (h - r)^3 in d dimensions.
double spiky_constant(int dim, double h);
/// dW/dr of the spiky kernel (non-positive).
double spiky_derivative(int dim, double r, double h);

std::vector<double> sph_density(const Matrix& points, std::span<const double> masses, double h);

/// Density of an interior particle of the infinite rest lattice with
/// unit masses (line, square or cubic lattice of the configured spacing).
double rest_lattice_density(int dim, const SolverConfig& config);

/// Pressure, viscosity and gravity accelerations of every particle;
/// boundary rows are filled but never integrated.
Matrix sph_accelerations(const ParticleState& state, const SolverConfig& config, double rho0);

/// One explicit weakly compressible substep of length config.explicit_dt.
ParticleState explicit_wcsph_step(const ParticleState& state, const SolverConfig& config);
/// Substeps covering one frame_dt.
ParticleState explicit_wcsph_frame(const ParticleState& state, const SolverConfig& config);

struct PressureSolveStats {
  int iterations = 0;
  double max_error = 0.0;
  bool converged = false;
};

/// Pressure-relaxation step of length config.frame_dt. Pressures start from
/// zero; `pressure` receives the converged values.
ParticleState iterative_column_step(const ParticleState& state, const SolverConfig& config,
                                    std::vector<double>& pressure,
                                    PressureSolveStats* stats = nullptr);

enum class SolverKind { iterative, explicit_wcsph };

/// `frames` frames after `state0` with the chosen solver.
Trajectory simulate_reference(const ParticleState& state0, const SolverConfig& config,
                              std::size_t frames, SolverKind kind, std::size_t* flagged = nullptr);

/// Fluid stacked on the two-particle floor (floor at -2r and 0, fluid from
/// 2r upwards), lifted by `lift` meters.
ParticleState column_scene(int fluid_count, const SolverConfig& config, double lift = 0.0);

struct DropsSpec {
  double drop_radius = 0.04;
  double separation = 0.12;  // center distance
  double speed = 0.5;        // each drop moves towards the other
  std::size_t frames = 100;
};

/// Two mirror-symmetric circular drops on a square lattice moving head-on
/// along x. No boundary particles.
ParticleState drops_scene(const DropsSpec& spec, const SolverConfig& config);

std::vector<Trajectory> gen_column_dataset(const std::vector<int>& counts, std::size_t frames,
                                           const SolverConfig& config);
std::vector<Trajectory> gen_freefall_dataset(const std::vector<int>& counts, double height,
                                             std::size_t frames, const SolverConfig& config);
/// Two trajectories: gravity (0, -9.81) and zero gravity.
std::vector<Trajectory> gen_drops2d_dataset(const DropsSpec& spec, const SolverConfig& config);

}  // namespace dmcf
