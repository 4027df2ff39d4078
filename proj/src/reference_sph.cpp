#include "dmcf/reference_sph.hpp"

#include <cmath>
#include <numbers>

#include "dmcf/geometry.hpp"

namespace dmcf {

void SolverConfig::validate(int dim) const {
  if (!(particle_radius > 0.0) || !(support_scale > 0.0))
    throw ConfigError("particle radius and support scale must be positive");
  if (!(frame_dt > 0.0) || !(explicit_dt > 0.0)) throw ConfigError("time steps must be positive");
  if (!(stiffness >= 0.0) || !(viscosity >= 0.0))
    throw ConfigError("stiffness and viscosity must be non-negative");
  if (!(tolerance > 0.0) || max_iterations < 1) throw ConfigError("invalid pressure solve limits");
  if (!(relaxation > 0.0)) throw ConfigError("relaxation must be positive");
  if (gravity.size() != static_cast<std::size_t>(dim))
    throw ConfigError("gravity does not match the scene dimension");
}

double poly6_constant(int dim, double h) {
  switch (dim) {
    case 1: return 35.0 / (32.0 * std::pow(h, 7));
    case 2: return 4.0 / (std::numbers::pi * std::pow(h, 8));
    case 3: return 315.0 / (64.0 * std::numbers::pi * std::pow(h, 9));
    default: throw InputError("dimension must be 1, 2 or 3");
  }
}

double poly6_kernel(int dim, double r, double h) {
  if (r >= h) return 0.0;
  const double t = h * h - r * r;
  return poly6_constant(dim, h) * t * t * t;
}

double spiky_constant(int dim, double h) {
  switch (dim) {
    case 1: return 2.0 / std::pow(h, 4);
    case 2: return 10.0 / (std::numbers::pi * std::pow(h, 5));
    case 3: return 15.0 / (std::numbers::pi * std::pow(h, 6));
    default: throw InputError("dimension must be 1, 2 or 3");
  }
}

double spiky_derivative(int dim, double r, double h) {
  if (r >= h) return 0.0;
  const double t = h - r;
  return -3.0 * spiky_constant(dim, h) * t * t;
}

std::vector<double> sph_density(const Matrix& points, std::span<const double> masses, double h) {
  if (!(h > 0.0)) throw InputError("support radius must be positive");
  if (masses.size() != points.rows()) throw InputError("mass count does not match points");
  const int dim = static_cast<int>(points.cols());
  std::vector<double> rho(points.rows(), 0.0);
  if (points.rows() == 0) return rho;
  const NeighborList nb = fixed_radius_neighbors(points, points, h);
  const double c = poly6_constant(dim, h);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double sum = 0.0;
    for (std::uint32_t j : nb.of(i)) {
      double r2 = 0.0;
      for (int a = 0; a < dim; ++a) {
        const double dx = points(i, a) - points(j, a);
        r2 += dx * dx;
      }
      const double t = h * h - r2;
      if (t > 0.0) sum += masses[j] * c * t * t * t;
    }
    rho[i] = sum;
  }
  return rho;
}

double rest_lattice_density(int dim, const SolverConfig& config) {
  const double h = config.support();
  const double s = config.spacing();
  const int reach = static_cast<int>(std::ceil(h / s));
  double rho = 0.0;
  const int ny = dim >= 2 ? reach : 0;
  const int nz = dim >= 3 ? reach : 0;
  for (int i = -reach; i <= reach; ++i)
    for (int j = -ny; j <= ny; ++j)
      for (int k = -nz; k <= nz; ++k) {
        const double r = s * std::sqrt(double(i * i + j * j + k * k));
        rho += poly6_kernel(dim, r, h);
      }
  return rho;
}

namespace {

double rest_density(int dim, const SolverConfig& c) {
  return c.rest_density > 0.0 ? c.rest_density : rest_lattice_density(dim, c);
}

struct PairTerms {
  std::vector<double> rho;
  NeighborList nb;
};

PairTerms pair_terms(const ParticleState& s, double h) {
  return {sph_density(s.positions, s.masses, h), fixed_radius_neighbors(s.positions, s.positions, h)};
}

/// Adds -sum_j m_j (p_i/rho_i^2 + p_j/rho_j^2) grad W_ij to acc (fluid rows).
void add_pressure(const ParticleState& s, const NeighborList& nb, const std::vector<double>& rho,
                  const std::vector<double>& p, double h, Matrix& acc) {
  const int d = s.dim();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.types[i] != ParticleType::fluid) continue;
    const double ti = p[i] / (rho[i] * rho[i]);
    for (std::uint32_t j : nb.of(i)) {
      if (j == i) continue;
      double x[3] = {0, 0, 0};
      double r2 = 0.0;
      for (int a = 0; a < d; ++a) {
        x[a] = s.positions(i, a) - s.positions(j, a);
        r2 += x[a] * x[a];
      }
      const double r = std::sqrt(r2);
      if (r == 0.0) continue;
      const double dw = spiky_derivative(d, r, h);
      // Boundary particles mirror the pressure of the fluid particle they push.
      const double tj = s.types[j] == ParticleType::fluid ? p[j] / (rho[j] * rho[j]) : ti;
      const double coef = -s.masses[j] * (ti + tj) * dw / r;
      for (int a = 0; a < d; ++a) acc(i, a) += coef * x[a];
    }
  }
}

void add_viscosity(const ParticleState& s, const NeighborList& nb, const std::vector<double>& rho,
                   double nu, double h, Matrix& acc) {
  if (nu == 0.0) return;
  const int d = s.dim();
  const double scale = 2.0 * (d + 2) * nu;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.types[i] != ParticleType::fluid) continue;
    for (std::uint32_t j : nb.of(i)) {
      if (j == i) continue;
      double x[3] = {0, 0, 0};
      double r2 = 0.0, vx = 0.0;
      for (int a = 0; a < d; ++a) {
        x[a] = s.positions(i, a) - s.positions(j, a);
        r2 += x[a] * x[a];
        vx += (s.velocities(i, a) - s.velocities(j, a)) * x[a];
      }
      const double r = std::sqrt(r2);
      if (r == 0.0) continue;
      const double rho_ij = 0.5 * (rho[i] + rho[j]);
      const double dw = spiky_derivative(d, r, h);
      const double coef = scale * s.masses[j] / rho_ij * vx / (r2 + 0.01 * h * h) * dw / r;
      for (int a = 0; a < d; ++a) acc(i, a) += coef * x[a];
    }
  }
}

void add_gravity(const ParticleState& s, std::span<const double> g, Matrix& acc) {
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.types[i] == ParticleType::fluid)
      for (std::size_t a = 0; a < g.size(); ++a) acc(i, a) += g[a];
}

void check_finite(const ParticleState& s, std::size_t step) {
  if (!s.positions.all_finite() || !s.velocities.all_finite())
    throw SimulationDiverged(step, "reference solver produced non-finite values");
}

}  // namespace

Matrix sph_accelerations(const ParticleState& state, const SolverConfig& config, double rho0) {
  const double h = config.support();
  const PairTerms pt = pair_terms(state, h);
  std::vector<double> p(state.size());
  for (std::size_t i = 0; i < state.size(); ++i)
    p[i] = config.stiffness * std::max(0.0, pt.rho[i] - rho0);
  Matrix acc(state.size(), state.positions.cols());
  add_pressure(state, pt.nb, pt.rho, p, h, acc);
  add_viscosity(state, pt.nb, pt.rho, config.viscosity, h, acc);
  add_gravity(state, config.gravity, acc);
  return acc;
}

ParticleState explicit_wcsph_step(const ParticleState& state, const SolverConfig& config) {
  config.validate(state.dim());
  const double dt = config.explicit_dt;
  const Matrix acc = sph_accelerations(state, config, rest_density(state.dim(), config));
  ParticleState out = state;
  const std::size_t d = state.positions.cols();
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state.types[i] != ParticleType::fluid) continue;
    for (std::size_t a = 0; a < d; ++a) {
      out.velocities(i, a) += dt * acc(i, a);
      out.positions(i, a) += dt * out.velocities(i, a);
      out.accelerations(i, a) = acc(i, a);
    }
  }
  check_finite(out, 0);
  return out;
}

ParticleState explicit_wcsph_frame(const ParticleState& state, const SolverConfig& config) {
  const long n = std::lround(config.frame_dt / config.explicit_dt);
  if (n < 1) throw ConfigError("explicit step longer than a frame");
  ParticleState s = state;
  for (long k = 0; k < n; ++k) s = explicit_wcsph_step(s, config);
  return s;
}

ParticleState iterative_column_step(const ParticleState& state, const SolverConfig& config,
                                    std::vector<double>& pressure, PressureSolveStats* stats) {
  config.validate(state.dim());
  const int d = state.dim();
  const std::size_t n = state.size();
  const double dt = config.frame_dt;
  const double h = config.support();
  const double rho0 = rest_density(d, config);

  // Non-pressure forces at the start positions.
  const PairTerms pt = pair_terms(state, h);
  Matrix a_np(n, d);
  add_viscosity(state, pt.nb, pt.rho, config.viscosity, h, a_np);
  add_gravity(state, config.gravity, a_np);
  Matrix v_star = state.velocities;
  for (std::size_t i = 0; i < n; ++i)
    if (state.types[i] == ParticleType::fluid)
      for (int a = 0; a < d; ++a) v_star(i, a) += dt * a_np(i, a);

  // Jacobi scaling from the rest lattice around one particle:
  // d rho_i ~ m^2 dt^2 (2 / rho0^2) (|sum grad W|^2 + sum |grad W|^2) p_i.
  double sum_sq = 0.0;
  {
    const double s = config.spacing();
    const int reach = static_cast<int>(std::ceil(h / s));
    const int ny = d >= 2 ? reach : 0, nz = d >= 3 ? reach : 0;
    for (int i = -reach; i <= reach; ++i)
      for (int j = -ny; j <= ny; ++j)
        for (int k = -nz; k <= nz; ++k) {
          const double r = s * std::sqrt(double(i * i + j * j + k * k));
          if (r == 0.0 || r >= h) continue;
          const double t = h * h - r * r;
          const double dpoly = -6.0 * r * t * t * poly6_constant(d, h);
          sum_sq += dpoly * spiky_derivative(d, r, h);
        }
  }
  const double delta = 1.0 / (dt * dt * 2.0 / (rho0 * rho0) * sum_sq);

  pressure.assign(n, 0.0);
  ParticleState trial = state;
  Matrix a_p(n, d);
  PressureSolveStats st;
  for (int it = 0;; ++it) {
    a_p.fill(0.0);
    add_pressure(state, pt.nb, pt.rho, pressure, h, a_p);
    for (std::size_t i = 0; i < n; ++i) {
      if (state.types[i] != ParticleType::fluid) continue;
      for (int a = 0; a < d; ++a) {
        trial.velocities(i, a) = v_star(i, a) + dt * a_p(i, a);
        trial.positions(i, a) = state.positions(i, a) + dt * trial.velocities(i, a);
      }
    }
    const std::vector<double> rho = sph_density(trial.positions, trial.masses, h);
    // Compression anywhere, or expansion where pressure is still pushing.
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = rho[i] / rho0 - 1.0;
      if (state.types[i] != ParticleType::fluid) continue;
      err = std::max(err, e);
      if (pressure[i] > 0.0) err = std::max(err, -e);
    }
    st.iterations = it;
    st.max_error = std::max(0.0, err);
    if (err < config.tolerance) {
      st.converged = true;
      break;
    }
    if (it >= config.max_iterations) break;
    for (std::size_t i = 0; i < n; ++i)
      if (state.types[i] == ParticleType::fluid)
        pressure[i] = std::max(0.0, pressure[i] + config.relaxation * delta * (rho[i] - rho0));
  }
  for (std::size_t i = 0; i < n; ++i)
    if (state.types[i] == ParticleType::fluid)
      for (int a = 0; a < d; ++a) trial.accelerations(i, a) = a_np(i, a) + a_p(i, a);
  if (stats) *stats = st;
  check_finite(trial, 0);
  return trial;
}

Trajectory simulate_reference(const ParticleState& state0, const SolverConfig& config,
                              std::size_t frames, SolverKind kind, std::size_t* flagged) {
  state0.validate();
  config.validate(state0.dim());
  Trajectory tr;
  tr.dt = config.frame_dt;
  tr.particle_radius = config.particle_radius;
  tr.gravity = config.gravity;
  tr.frames.push_back(state0);
  std::vector<double> pressure;
  std::size_t bad = 0;
  for (std::size_t f = 1; f <= frames; ++f) {
    try {
      if (kind == SolverKind::explicit_wcsph) {
        tr.frames.push_back(explicit_wcsph_frame(tr.frames.back(), config));
      } else {
        PressureSolveStats st;
        tr.frames.push_back(iterative_column_step(tr.frames.back(), config, pressure, &st));
        if (!st.converged) ++bad;
      }
    } catch (const SimulationDiverged&) {
      throw SimulationDiverged(f, "reference solver produced non-finite values");
    }
  }
  if (flagged) *flagged = bad;
  return tr;
}

ParticleState column_scene(int fluid_count, const SolverConfig& config, double lift) {
  if (fluid_count < 1) throw InputError("column needs at least one fluid particle");
  const double s = config.spacing();
  Matrix fp(fluid_count, 1), fv(fluid_count, 1), bp(2, 1), bn(2, 1, 1.0);
  for (int i = 0; i < fluid_count; ++i) fp(i, 0) = s * (i + 1) + lift;
  bp(0, 0) = -s;
  bp(1, 0) = 0.0;
  return make_state(fp, fv, bp, bn);
}

ParticleState drops_scene(const DropsSpec& spec, const SolverConfig& config) {
  const double s = config.spacing();
  const int reach = static_cast<int>(std::floor(spec.drop_radius / s));
  std::vector<std::array<double, 2>> offsets;
  for (int i = -reach; i <= reach; ++i)
    for (int j = -reach; j <= reach; ++j) {
      const double x = s * i, y = s * j;
      if (x * x + y * y <= spec.drop_radius * spec.drop_radius * (1 + 1e-12))
        offsets.push_back({x, y});
    }
  const std::size_t m = offsets.size();
  Matrix fp(2 * m, 2), fv(2 * m, 2);
  const double cx = 0.5 * spec.separation;
  for (std::size_t k = 0; k < m; ++k) {
    fp(k, 0) = -cx + offsets[k][0];
    fp(k, 1) = offsets[k][1];
    fv(k, 0) = spec.speed;
    fp(m + k, 0) = cx - offsets[k][0];
    fp(m + k, 1) = offsets[k][1];
    fv(m + k, 0) = -spec.speed;
  }
  return make_state(fp, fv, Matrix(0, 2), Matrix(0, 2));
}

std::vector<Trajectory> gen_column_dataset(const std::vector<int>& counts, std::size_t frames,
                                           const SolverConfig& config) {
  std::vector<Trajectory> out;
  for (int c : counts) {
    Trajectory t = simulate_reference(column_scene(c, config), config, frames, SolverKind::iterative);
    t.name = "column_" + std::to_string(c);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Trajectory> gen_freefall_dataset(const std::vector<int>& counts, double height,
                                             std::size_t frames, const SolverConfig& config) {
  std::vector<Trajectory> out;
  for (int c : counts) {
    Trajectory t = simulate_reference(column_scene(c, config, height), config, frames,
                                      SolverKind::iterative);
    t.name = "freefall_" + std::to_string(c);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Trajectory> gen_drops2d_dataset(const DropsSpec& spec, const SolverConfig& config) {
  std::vector<Trajectory> out;
  const std::vector<std::vector<double>> gravities{{0.0, -9.81}, {0.0, 0.0}};
  const char* names[] = {"drops_gravity", "drops_zero_gravity"};
  for (std::size_t k = 0; k < gravities.size(); ++k) {
    SolverConfig c = config;
    c.gravity = gravities[k];
    Trajectory t = simulate_reference(drops_scene(spec, c), c, spec.frames, SolverKind::explicit_wcsph);
    t.name = names[k];
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace dmcf
