#include <doctest.h>

#include <numbers>

#include "dmcf/reference_sph.hpp"
#include "test_support.hpp"

using namespace dmcf;

namespace {

// Radial integral of f over the d-ball of radius h (Simpson rule).
double radial_integral(int dim, double h, const std::function<double(double)>& f) {
  const int n = 20000;
  const double dr = h / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double r = i * dr;
    const double shell = dim == 1 ? 2.0 : dim == 2 ? 2.0 * std::numbers::pi * r : 4.0 * std::numbers::pi * r * r;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    sum += w * shell * f(r);
  }
  return sum * dr / 3.0;
}

double mean_speed(const ParticleState& s) {
  double sum = 0.0;
  const auto fluid = s.fluid_indices();
  for (auto i : fluid) sum += std::abs(s.velocities(i, 0));
  return sum / fluid.size();
}

}  // namespace

TEST_CASE("kernels integrate to one") {
  const double h = 0.02;
  for (int dim = 1; dim <= 3; ++dim) {
    CHECK(radial_integral(dim, h, [&](double r) { return poly6_kernel(dim, r, h); }) ==
          doctest::Approx(1.0).epsilon(1e-6));
    const double c = spiky_constant(dim, h);
    CHECK(radial_integral(dim, h, [&](double r) { return c * std::pow(h - r, 3); }) ==
          doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(poly6_constant(1, h) == doctest::Approx(35.0 / (32.0 * std::pow(h, 7))));
  CHECK(poly6_kernel(2, h, h) == 0.0);
}

TEST_CASE("spiky derivative matches the kernel slope") {
  const double h = 0.02;
  for (int dim = 1; dim <= 3; ++dim) {
    const double c = spiky_constant(dim, h);
    for (double r : {0.001, 0.007, 0.015}) {
      const double e = 1e-7;
      const double fd = c * (std::pow(h - r - e, 3) - std::pow(h - r + e, 3)) / (2 * e);
      CHECK(spiky_derivative(dim, r, h) == doctest::Approx(fd).epsilon(1e-6));
    }
    CHECK(spiky_derivative(dim, h, h) == 0.0);
  }
}

TEST_CASE("density sums") {
  const double h = 0.02;
  Matrix one(1, 2);
  const double m1[1] = {1.0};
  CHECK(sph_density(one, m1, h)[0] == doctest::Approx(poly6_kernel(2, 0.0, h)));

  std::mt19937_64 rng(1);
  const Matrix p = test::random_matrix(30, 2, 0.0, 0.05, rng);
  std::vector<double> m(30, 1.0), m2(30, 2.0);
  const auto a = sph_density(p, m, h);
  const auto b = sph_density(p, m2, h);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(2.0 * a[i]));
}

TEST_CASE("rest density calibration") {
  SolverConfig cfg;
  CHECK(rest_lattice_density(1, cfg) == doctest::Approx(100.83).epsilon(1e-3));
  for (int dim = 1; dim <= 2; ++dim) {
    // Interior particle of a finite lattice.
    const int n = 21;
    const std::size_t count = dim == 1 ? n : n * n;
    Matrix p(count, dim);
    for (std::size_t i = 0; i < count; ++i) {
      p(i, 0) = cfg.spacing() * static_cast<double>(i % n);
      if (dim == 2) p(i, 1) = cfg.spacing() * static_cast<double>(i / n);
    }
    const std::vector<double> m(count, 1.0);
    const auto rho = sph_density(p, m, cfg.support());
    const std::size_t center = dim == 1 ? n / 2 : (n / 2) * n + n / 2;
    CHECK(std::abs(rho[center] / rest_lattice_density(dim, cfg) - 1.0) <= 0.02);
  }
}

TEST_CASE("explicit solver: equilibrium, momentum, free particle") {
  SolverConfig cfg;
  cfg.gravity = {0.0, 0.0};
  const double rho0 = rest_lattice_density(2, cfg);
  {
    const int n = 15;
    Matrix p(n * n, 2);
    for (int i = 0; i < n * n; ++i) {
      p(i, 0) = cfg.spacing() * (i % n);
      p(i, 1) = cfg.spacing() * (i / n);
    }
    const auto s = make_state(p, Matrix(n * n, 2), Matrix(0, 2), Matrix(0, 2));
    const Matrix acc = sph_accelerations(s, cfg, rho0);
    const std::size_t center = (n / 2) * n + n / 2;
    CHECK(std::hypot(acc(center, 0), acc(center, 1)) <= 1e-6 * 9.81);
  }
  {
    std::mt19937_64 rng(2);
    const Matrix p = test::random_matrix(40, 2, 0.0, 0.06, rng);
    const Matrix v = test::random_matrix(40, 2, -0.3, 0.3, rng);
    cfg.gravity = {0.0, -9.81};
    ParticleState s = make_state(p, v, Matrix(0, 2), Matrix(0, 2));
    for (int k = 0; k < 10; ++k) {
      const auto next = explicit_wcsph_step(s, cfg);
      for (int a = 0; a < 2; ++a) {
        double before = 0.0, after = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
          before += s.velocities(i, a);
          after += next.velocities(i, a);
          scale += std::abs(next.velocities(i, a) - s.velocities(i, a));
        }
        const double impulse = 40.0 * cfg.gravity[a] * cfg.explicit_dt;
        CHECK(std::abs(after - before - impulse) <= 1e-10 * std::max(1.0, scale));
      }
      s = next;
    }
  }
  {
    SolverConfig one;
    Matrix p(1, 1), v(1, 1);
    v(0, 0) = 0.2;
    const auto s = make_state(p, v, Matrix(0, 1), Matrix(0, 1));
    const auto next = explicit_wcsph_step(s, one);
    const double vn = 0.2 + one.explicit_dt * -9.81;
    CHECK(next.velocities(0, 0) == doctest::Approx(vn).epsilon(1e-14));
    CHECK(next.positions(0, 0) == doctest::Approx(one.explicit_dt * vn).epsilon(1e-14));
  }
}

TEST_CASE("iterative solver meets the density tolerance and settles") {
  SolverConfig cfg;
  ParticleState s = column_scene(40, cfg);
  std::vector<double> pressure;
  for (int frame = 0; frame < 100; ++frame) {
    PressureSolveStats stats;
    s = iterative_column_step(s, cfg, pressure, &stats);
    CHECK(stats.converged);
    CHECK(stats.max_error < cfg.tolerance);
  }
  CHECK(mean_speed(s) < 1e-3);
}

TEST_CASE("iterative solver keeps a gravity-free rest column fixed") {
  SolverConfig cfg;
  cfg.gravity = {0.0};
  const ParticleState s0 = column_scene(10, cfg);
  std::vector<double> pressure;
  ParticleState s = s0;
  for (int frame = 0; frame < 10; ++frame) s = iterative_column_step(s, cfg, pressure);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s.positions(i, 0) - s0.positions(i, 0)) <= 1e-9);
}

TEST_CASE("column and free-fall datasets") {
  SolverConfig cfg;
  std::vector<int> counts(40);
  std::iota(counts.begin(), counts.end(), 1);
  const auto col = gen_column_dataset(counts, 100, cfg);
  REQUIRE(col.size() == 40);
  for (std::size_t k = 0; k < col.size(); ++k) {
    CHECK(col[k].frames.size() == 101);
    CHECK(col[k].frames.front().boundary_indices().size() == 2);
    CHECK(col[k].frames.front().fluid_indices().size() == k + 1);
    CHECK(col[k].dt == 0.0025);
  }

  const auto ff = gen_freefall_dataset({1, 2, 3, 4, 5}, 0.01, 100, cfg);
  REQUIRE(ff.size() == 5);
  for (const auto& t : ff) {
    for (auto i : t.frames.front().fluid_indices()) CHECK(t.frames.front().velocities(i, 0) == 0.0);
    // Bottom fluid particle; contact once it gets within h of the floor top.
    const auto fluid = t.frames.front().fluid_indices();
    const double y0 = t.frames.front().positions(fluid.front(), 0);
    for (std::size_t n = 1; n < t.frames.size(); ++n) {
      const double y = t.frames[n].positions(fluid.front(), 0);
      if (y < cfg.support()) break;
      const double ballistic = y0 + cfg.frame_dt * cfg.frame_dt * -9.81 * n * (n + 1) / 2.0;
      CHECK(y == doctest::Approx(ballistic).epsilon(1e-9));
    }
  }
}

TEST_CASE("drops dataset") {
  SolverConfig cfg;
  DropsSpec spec;
  spec.drop_radius = 0.02;
  spec.separation = 0.06;
  spec.frames = 20;
  const auto drops = gen_drops2d_dataset(spec, cfg);
  REQUIRE(drops.size() == 2);
  const auto& zero = drops[1];
  CHECK(zero.gravity == std::vector<double>{0.0, 0.0});
  const auto& f0 = zero.frames.front();
  std::size_t left = 0;
  for (std::size_t i = 0; i < f0.size(); ++i) left += f0.positions(i, 0) < 0.0;
  CHECK(2 * left == f0.size());
  const double scale = f0.size() * spec.speed;
  for (const auto& f : zero.frames) {
    double px = 0.0, py = 0.0, cx = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      px += f.velocities(i, 0);
      py += f.velocities(i, 1);
      cx += f.positions(i, 0);
    }
    CHECK(std::abs(px) <= 1e-8 * scale);
    CHECK(std::abs(py) <= 1e-8 * scale);
    CHECK(std::abs(cx / f.size()) <= 1e-10);
  }
}
