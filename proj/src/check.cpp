#include "dmcf/check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dmcf/geometry.hpp"
#include "dmcf/layers.hpp"
#include "dmcf/metrics.hpp"

namespace dmcf {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& x : m.storage()) x = u(rng);
  return m;
}

AntisymmetricKernel random_ascc(int dim, int c_in, int c_out, double radius, std::mt19937_64& rng) {
  AntisymmetricKernel k;
  k.spec = KernelSpec{dim, 4, c_in, c_out, Window::poly6, radius};
  k.mirror_axis = default_mirror_axis(dim);
  k.half_values = random_matrix(half_cell_count(k.spec) * static_cast<std::size_t>(c_in),
                                static_cast<std::size_t>(c_out), -1.0, 1.0, rng);
  return k;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

CheckResult momentum_sum(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int dim = 1; dim <= 2; ++dim) {
    for (int trial = 0; trial < 5; ++trial) {
      const double radius = 0.3;
      const Matrix points = random_matrix(40, static_cast<std::size_t>(dim), 0.0, 1.0, rng);
      const Matrix features = random_matrix(40, 3, -1.0, 1.0, rng);
      const auto kernel = random_ascc(dim, 3, 2, radius, rng);
      const auto nb = fixed_radius_neighbors(points, points, radius);
      const Matrix out = ascc_forward(features, points, kernel, nb);
      for (std::size_t c = 0; c < out.cols(); ++c) {
        double sum = 0.0, mag = 0.0;
        for (std::size_t i = 0; i < out.rows(); ++i) {
          sum += out(i, c);
          mag += std::abs(out(i, c));
        }
        if (mag > 0.0) worst = std::max(worst, std::abs(sum) / mag);
      }
    }
  }
  return {"ascc momentum sum", worst <= 1e-9, "max |sum|/sum|out| = " + fmt(worst)};
}

CheckResult antisymmetry(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int dim = 1; dim <= 3; ++dim) {
    const auto kernel = random_ascc(dim, 2, 2, 1.0, rng);
    const Matrix full = materialize_antisymmetric(kernel);
    std::vector<double> zero(static_cast<std::size_t>(dim), 0.0);
    const Matrix at_zero = interpolate_kernel(kernel.spec, full, zero);
    for (double x : at_zero.storage()) worst = std::max(worst, std::abs(x));
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    for (int s = 0; s < 200; ++s) {
      std::vector<double> v(static_cast<std::size_t>(dim)), w(v.size());
      for (std::size_t a = 0; a < v.size(); ++a) {
        v[a] = u(rng);
        w[a] = -v[a];
      }
      const Matrix g1 = interpolate_kernel(kernel.spec, full, v);
      const Matrix g2 = interpolate_kernel(kernel.spec, full, w);
      for (std::size_t i = 0; i < g1.storage().size(); ++i)
        worst = std::max(worst, std::abs(g1.storage()[i] + g2.storage()[i]));
    }
  }
  return {"kernel antisymmetry", worst <= 1e-12, "max |G(v)+G(-v)| = " + fmt(worst)};
}

double weighted_sum(const Matrix& out, const Matrix& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.storage().size(); ++i) s += out.storage()[i] * weights.storage()[i];
  return s;
}

CheckResult ascc_gradient(std::mt19937_64& rng) {
  const int dim = 2;
  const double radius = 0.6;
  Matrix points = random_matrix(6, dim, 0.0, 1.0, rng);
  Matrix features = random_matrix(6, 2, -1.0, 1.0, rng);
  auto kernel = random_ascc(dim, 2, 2, radius, rng);
  auto nb = std::make_shared<NeighborList>(fixed_radius_neighbors(points, points, radius));
  ConvCache cache;
  const Matrix out = ascc_forward(features, points, kernel, *nb, &cache);
  const Matrix weights = random_matrix(out.rows(), out.cols(), -1.0, 1.0, rng);
  const ASCCGrads grads = ascc_backward(weights, cache);

  auto loss = [&]() { return weighted_sum(ascc_forward(features, points, kernel, *nb), weights); };
  const double h = 1e-6;
  double worst = 0.0;
  auto probe = [&](double& x, double analytic) {
    const double keep = x;
    x = keep + h;
    const double up = loss();
    x = keep - h;
    const double down = loss();
    x = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - analytic) / std::max(1.0, std::abs(fd)));
  };
  for (std::size_t i = 0; i < features.storage().size(); i += 3)
    probe(features.storage()[i], grads.features.storage()[i]);
  for (std::size_t i = 0; i < kernel.half_values.storage().size(); i += 5)
    probe(kernel.half_values.storage()[i], grads.half_values.storage()[i]);
  // Positions move the neighbor set only if a pair crosses the radius; h is small enough.
  for (std::size_t i = 0; i < points.storage().size(); ++i)
    probe(points.storage()[i], grads.positions.storage()[i]);
  return {"ascc gradient", worst <= 1e-4, "max relative error = " + fmt(worst)};
}

CheckResult emd_oracle(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 5);
    const std::size_t dim = 1 + static_cast<std::size_t>(trial % 2);
    const Matrix a = random_matrix(n, dim, 0.0, 1.0, rng);
    const Matrix b = random_matrix(n, dim, 0.0, 1.0, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim; ++k) c += (a(i, k) - b(perm[i], k)) * (a(i, k) - b(perm[i], k));
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    worst = std::max(worst, std::abs(emd(a, b).total - best));
  }
  return {"emd oracle", worst <= 1e-9, "max |emd - brute force| = " + fmt(worst)};
}

}  // namespace

std::vector<CheckResult> run_invariant_checks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> results;
  results.push_back(momentum_sum(rng));
  results.push_back(antisymmetry(rng));
  results.push_back(ascc_gradient(rng));
  results.push_back(emd_oracle(rng));
  return results;
}

}  // namespace dmcf
