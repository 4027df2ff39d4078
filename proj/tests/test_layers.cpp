#include <doctest.h>

#include "dmcf/errors.hpp"
#include "dmcf/layers.hpp"
#include "test_support.hpp"

using namespace dmcf;

namespace {

KernelGrid random_grid(int dim, int k, int cin, int cout, double radius, std::mt19937_64& rng,
                       bool bias = true) {
  KernelGrid g;
  g.spec = KernelSpec{dim, k, cin, cout, Window::poly6, radius};
  g.values = test::random_matrix(g.spec.rows(), cout, -1.0, 1.0, rng);
  if (bias) g.bias = test::random_matrix(1, cout, -1.0, 1.0, rng);
  return g;
}

AntisymmetricKernel random_half(int dim, int k, int cin, int cout, double radius, std::mt19937_64& rng) {
  AntisymmetricKernel a;
  a.spec = KernelSpec{dim, k, cin, cout, Window::peak, radius};
  a.mirror_axis = default_mirror_axis(dim);
  a.half_values = test::random_matrix(half_cell_count(a.spec) * cin, cout, -1.0, 1.0, rng);
  return a;
}

}  // namespace

TEST_CASE("cconv: empty neighborhood yields the bias") {
  std::mt19937_64 rng(1);
  auto g = random_grid(2, 4, 2, 3, 0.1, rng);
  Matrix data(1, 2), query(1, 2), f(1, 2);
  query(0, 0) = 5.0;
  const auto nb = fixed_radius_neighbors(data, query, 0.1);
  CHECK(cconv_forward(f, data, query, g, nb) == g.bias);
}

TEST_CASE("cconv: single coincident point gives a * f") {
  KernelGrid g;
  g.spec = KernelSpec{1, 4, 1, 1, Window::poly6, 1.0};
  g.values = Matrix(4, 1);
  g.values.fill(2.5);
  Matrix p(1, 1), f(1, 1);
  f(0, 0) = 3.0;
  const auto nb = fixed_radius_neighbors(p, p, 1.0);
  CHECK(cconv_forward(f, p, p, g, nb)(0, 0) == doctest::Approx(7.5));
}

TEST_CASE("cconv is linear in the features") {
  std::mt19937_64 rng(2);
  auto g = random_grid(2, 4, 2, 3, 0.4, rng, false);
  const Matrix p = test::random_matrix(20, 2, 0.0, 1.0, rng);
  Matrix f = test::random_matrix(20, 2, -1.0, 1.0, rng);
  const auto nb = fixed_radius_neighbors(p, p, 0.4);
  const Matrix a = cconv_forward(f, p, p, g, nb);
  for (double& x : f.storage()) x *= 2.0;
  const Matrix b = cconv_forward(f, p, p, g, nb);
  for (std::size_t i = 0; i < a.storage().size(); ++i)
    CHECK(b.storage()[i] == doctest::Approx(2.0 * a.storage()[i]));
}

TEST_CASE("cconv backward matches finite differences") {
  std::mt19937_64 rng(3);
  for (int dim = 1; dim <= 2; ++dim) {
    auto g = random_grid(dim, 4, 2, 3, 0.6, rng);
    Matrix data = test::random_matrix(6, dim, 0.0, 1.0, rng);
    Matrix query = test::random_matrix(4, dim, 0.0, 1.0, rng);
    Matrix f = test::random_matrix(6, 2, -1.0, 1.0, rng);
    const auto nb = fixed_radius_neighbors(data, query, 0.6);
    ConvCache cache;
    const Matrix out = cconv_forward(f, data, query, g, nb, &cache);
    const Matrix w = test::random_matrix(out.rows(), out.cols(), -1.0, 1.0, rng);
    cache.neighbors = std::make_shared<NeighborList>(nb);
    const CConvGrads grads = cconv_backward(w, cache);
    auto loss = [&] { return test::dot(cconv_forward(f, data, query, g, nb), w); };
    CHECK(test::max_rel_error(grads.features, test::numeric_gradient(loss, f)) <= 1e-5);
    CHECK(test::max_rel_error(grads.kernel, test::numeric_gradient(loss, g.values)) <= 1e-5);
    CHECK(test::max_rel_error(grads.bias, test::numeric_gradient(loss, g.bias)) <= 1e-5);
    CHECK(test::max_rel_error(grads.data_positions, test::numeric_gradient(loss, data)) <= 1e-5);
    CHECK(test::max_rel_error(grads.query_positions, test::numeric_gradient(loss, query)) <= 1e-5);

    const CConvGrads zero = cconv_backward(Matrix(out.rows(), out.cols()), cache);
    for (double x : zero.kernel.storage()) CHECK(x == 0.0);
    for (double x : zero.features.storage()) CHECK(x == 0.0);
  }
}

TEST_CASE("cconv single-pair kernel gradient is window * f * interpolation weights") {
  KernelGrid g;
  g.spec = KernelSpec{1, 4, 1, 1, Window::poly6, 1.0};
  g.values = Matrix(4, 1);
  Matrix data(1, 1), query(1, 1), f(1, 1);
  data(0, 0) = 0.25;
  f(0, 0) = 2.0;
  const auto nb = fixed_radius_neighbors(data, query, 1.0);
  ConvCache cache;
  const Matrix out = cconv_forward(f, data, query, g, nb, &cache);
  cache.neighbors = std::make_shared<NeighborList>(nb);
  Matrix seed(1, 1);
  seed(0, 0) = 1.0;
  const auto grads = cconv_backward(seed, cache);
  // c = (0.25 + 1) / 2 * 3 = 1.875: weights 0.125 on cell 1, 0.875 on cell 2.
  const double w = poly6_window(0.25);
  CHECK(grads.kernel(0, 0) == 0.0);
  CHECK(grads.kernel(1, 0) == doctest::Approx(w * 2.0 * 0.125));
  CHECK(grads.kernel(2, 0) == doctest::Approx(w * 2.0 * 0.875));
  CHECK(grads.kernel(3, 0) == 0.0);
}

TEST_CASE("materialize antisymmetric kernels") {
  AntisymmetricKernel k;
  k.spec = KernelSpec{1, 4, 1, 1, Window::peak, 1.0};
  k.mirror_axis = 0;
  k.half_values = Matrix(2, 1);
  k.half_values(0, 0) = 1.5;
  k.half_values(1, 0) = -0.25;
  const Matrix full = materialize_antisymmetric(k);
  CHECK(full(0, 0) == 1.5);
  CHECK(full(1, 0) == -0.25);
  CHECK(full(2, 0) == 0.25);
  CHECK(full(3, 0) == -1.5);

  AntisymmetricKernel k2;
  k2.spec = KernelSpec{2, 2, 1, 1, Window::peak, 1.0};
  k2.mirror_axis = 1;
  k2.half_values = Matrix(2, 1);
  k2.half_values(0, 0) = 0.7;  // cell (0,0)
  const Matrix full2 = materialize_antisymmetric(k2);
  CHECK(full2(3, 0) == -0.7);  // cell (1,1)

  k2.half_values.fill(0.0);
  const Matrix zero_grid = materialize_antisymmetric(k2);
  for (double x : zero_grid.storage()) CHECK(x == 0.0);

  AntisymmetricKernel odd = k;
  odd.spec.size = 5;
  CHECK_THROWS_AS(materialize_antisymmetric(odd), ConfigError);
}

TEST_CASE("interpolated antisymmetric kernel is odd") {
  std::mt19937_64 rng(4);
  for (int dim = 1; dim <= 3; ++dim)
    for (int k : {2, 4, 6, 8}) {
      const auto a = random_half(dim, k, 2, 2, 0.3, rng);
      const Matrix full = materialize_antisymmetric(a);
      const std::vector<double> zero(dim, 0.0);
      const Matrix at_zero = interpolate_kernel(a.spec, full, zero);
      for (double x : at_zero.storage()) CHECK(std::abs(x) <= 1e-12);
      std::uniform_real_distribution<double> u(-0.3, 0.3);
      for (int s = 0; s < 200; ++s) {
        std::vector<double> v(dim), mv(dim);
        for (int i = 0; i < dim; ++i) mv[i] = -(v[i] = u(rng));
        const Matrix g1 = interpolate_kernel(a.spec, full, v);
        const Matrix g2 = interpolate_kernel(a.spec, full, mv);
        for (std::size_t i = 0; i < g1.storage().size(); ++i)
          CHECK(std::abs(g1.storage()[i] + g2.storage()[i]) <= 1e-12);
      }
    }
}

TEST_CASE("ascc outputs sum to zero and pairs are opposite") {
  std::mt19937_64 rng(5);
  for (int dim = 1; dim <= 2; ++dim) {
    const auto a = random_half(dim, 8, 3, 2, 0.25, rng);
    const Matrix p = test::random_matrix(200, dim, 0.0, 1.0, rng);
    const Matrix f = test::random_matrix(200, 3, -1.0, 1.0, rng);
    const auto nb = fixed_radius_neighbors(p, p, 0.25);
    const Matrix out = ascc_forward(f, p, a, nb);
    for (std::size_t c = 0; c < out.cols(); ++c) {
      double s = 0.0, m = 0.0;
      for (std::size_t i = 0; i < out.rows(); ++i) {
        s += out(i, c);
        m += std::abs(out(i, c));
      }
      CHECK(std::abs(s) <= 1e-9 * m);
    }

    const Matrix two = test::random_matrix(2, dim, 0.0, 0.1, rng);
    const Matrix f2 = test::random_matrix(2, 3, -1.0, 1.0, rng);
    const auto nb2 = fixed_radius_neighbors(two, two, 0.25);
    const Matrix o2 = ascc_forward(f2, two, a, nb2);
    for (std::size_t c = 0; c < o2.cols(); ++c) CHECK(o2(0, c) == doctest::Approx(-o2(1, c)).epsilon(1e-12));

    const Matrix single = test::random_matrix(1, dim, 0.0, 1.0, rng);
    const Matrix o1 = ascc_forward(test::random_matrix(1, 3, -1.0, 1.0, rng), single, a,
                                   fixed_radius_neighbors(single, single, 0.25));
    for (double x : o1.storage()) CHECK(std::abs(x) <= 1e-15);
  }
}

TEST_CASE("ascc with zero half values is the zero map") {
  std::mt19937_64 rng(6);
  auto a = random_half(2, 8, 3, 2, 0.25, rng);
  a.half_values.fill(0.0);
  const Matrix p = test::random_matrix(30, 2, 0.0, 1.0, rng);
  const Matrix out = ascc_forward(test::random_matrix(30, 3, -1.0, 1.0, rng), p, a,
                                  fixed_radius_neighbors(p, p, 0.25));
  for (double x : out.storage()) CHECK(x == 0.0);
}

TEST_CASE("ascc rejects distinct data and query sets") {
  std::mt19937_64 rng(7);
  const auto a = random_half(1, 4, 1, 1, 0.5, rng);
  const Matrix p = test::random_matrix(3, 1, 0.0, 1.0, rng);
  const Matrix q = test::random_matrix(3, 1, 0.0, 1.0, rng);
  const auto nb = fixed_radius_neighbors(p, q, 0.5);
  CHECK_THROWS_AS(ascc_forward(Matrix(3, 1), p, q, a, nb), ContractViolation);
}

TEST_CASE("ascc backward matches finite differences") {
  std::mt19937_64 rng(8);
  for (int dim = 1; dim <= 2; ++dim) {
    auto a = random_half(dim, 4, 2, 2, 0.6, rng);
    Matrix p = test::random_matrix(7, dim, 0.0, 1.0, rng);
    Matrix f = test::random_matrix(7, 2, -1.0, 1.0, rng);
    const auto nb = fixed_radius_neighbors(p, p, 0.6);
    ConvCache cache;
    const Matrix out = ascc_forward(f, p, a, nb, &cache);
    cache.neighbors = std::make_shared<NeighborList>(nb);
    const Matrix w = test::random_matrix(out.rows(), out.cols(), -1.0, 1.0, rng);
    const ASCCGrads grads = ascc_backward(w, cache);
    auto loss = [&] { return test::dot(ascc_forward(f, p, a, nb), w); };
    CHECK(test::max_rel_error(grads.features, test::numeric_gradient(loss, f)) <= 1e-5);
    CHECK(test::max_rel_error(grads.half_values, test::numeric_gradient(loss, a.half_values)) <= 1e-5);
    CHECK(test::max_rel_error(grads.positions, test::numeric_gradient(loss, p)) <= 1e-5);
  }
}

TEST_CASE("folded gradient is own plus negated mirror") {
  KernelSpec s{1, 4, 1, 1, Window::peak, 1.0};
  Matrix full(4, 1);
  full(0, 0) = 1.0;
  full(1, 0) = 2.0;
  full(2, 0) = 5.0;
  full(3, 0) = 7.0;
  const Matrix half = fold_antisymmetric_gradient(s, 0, full);
  CHECK(half(0, 0) == -6.0);
  CHECK(half(1, 0) == -3.0);
}

TEST_CASE("single precision ascc agrees with double") {
  std::mt19937_64 rng(9);
  const auto a = random_half(2, 8, 2, 2, 0.25, rng);
  const Matrix p = test::random_matrix(100, 2, 0.0, 1.0, rng);
  const Matrix f = test::random_matrix(100, 2, -1.0, 1.0, rng);
  const auto nb = fixed_radius_neighbors(p, p, 0.25);
  const Matrix d = ascc_forward(f, p, a, nb);
  const MatrixF s = ascc_forward(f.cast<float>(), p.cast<float>(), a, nb);
  for (std::size_t i = 0; i < d.storage().size(); ++i)
    CHECK(std::abs(d.storage()[i] - s.storage()[i]) <= 1e-3 * (1.0 + std::abs(d.storage()[i])));
}

TEST_CASE("relu and its backward") {
  Matrix x(1, 3);
  x(0, 0) = -1.0;
  x(0, 2) = 2.0;
  const Matrix y = relu(x);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 2) == 2.0);
  Matrix g(1, 3);
  g.fill(3.0);
  const Matrix b = relu_backward(x, g);
  CHECK(b(0, 0) == 0.0);
  CHECK(b(0, 2) == 3.0);
}
