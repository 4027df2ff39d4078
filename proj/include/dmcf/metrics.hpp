#pragma once

#include <span>
#include <string>
#include <vector>

#include "dmcf/state.hpp"

namespace dmcf {

/// Fluid positions of every frame (rows = fluid particles).
std::vector<Matrix> fluid_positions(const std::vector<ParticleState>& frames);
std::vector<Matrix> fluid_velocities(const std::vector<ParticleState>& frames);

double rmse(const std::vector<Matrix>& pred, const std::vector<Matrix>& target);

struct EmdResult {
  double total = 0.0;  // minimum summed squared distance
  double mean = 0.0;   // total / N
};

/// Exact optimal assignment under squared Euclidean cost.
EmdResult emd(const Matrix& pred, const Matrix& target, std::size_t cap = 512);

/// Minimum-cost perfect matching on a square cost matrix; returns the
/// column assigned to each row.
std::vector<std::size_t> hungarian(const Matrix& cost);

/// Jensen-Shannon divergence (nats) between the speed histograms of two
/// frame sequences, binned over the pooled range.
double jsd_velocity(const std::vector<Matrix>& pred, const std::vector<Matrix>& target,
                    int bins = 64);
double jsd(std::span<const double> p, std::span<const double> q);

struct SeriesSummary {
  double mean = 0.0;
  std::vector<double> series;
};

/// |1 - max rho(pred) / max rho(target)| per frame; densities of the fluid
/// particles with unit masses.
SeriesSummary max_density_err(const std::vector<Matrix>& pred, const std::vector<Matrix>& target,
                              double h);

struct MomentumChange {
  std::vector<std::vector<double>> residual;  // per frame transition
  std::vector<double> norms;
  double summary = 0.0;  // mean norm
};

/// sum_i m_i (v_{t+1} - v_t)/dt - sum_i m_i g over fluid particles.
MomentumChange momentum_change(const std::vector<ParticleState>& frames,
                               std::span<const double> gravity, double dt);

struct MetricsReport {
  double rmse = 0.0;
  double emd = 0.0;
  double emd_total = 0.0;
  double jsd = 0.0;
  double max_density_err = 0.0;
  double momentum_change = 0.0;
  std::vector<double> rmse_series;
  std::vector<double> emd_series;
  std::vector<double> density_series;
  std::vector<double> momentum_series;  // one entry per frame, 0 for the first
};

struct MetricsOptions {
  int bins = 64;
  double density_support = 0.02;
  std::size_t emd_cap = 512;
};

MetricsReport evaluate(const Trajectory& pred, const Trajectory& target,
                       const MetricsOptions& options);

/// One row per frame: frame,rmse,emd,max_density_err,momentum_change.
std::string report_csv(const MetricsReport& report);
/// key = value lines with the summary numbers.
std::string report_summary(const MetricsReport& report);

}  // namespace dmcf
