#include <doctest.h>

#include <numeric>

#include "dmcf/network.hpp"
#include "dmcf/simulator.hpp"
#include "dmcf/state.hpp"
#include "test_support.hpp"

using namespace dmcf;

namespace {

// Parameter count from the channel plan, written out independently of the
// layout code.
std::size_t expected_count(const ArchitectureConfig& c) {
  const std::size_t cells = static_cast<std::size_t>(std::pow(c.kernel_size, c.dim));
  auto conv = [&](std::size_t cin, std::size_t cout) { return cells * cin * cout + cout; };
  std::size_t n = conv(2 * c.dim, c.pre_channels) + conv(c.dim, c.pre_channels);
  for (int ch : c.l1_channels) n += conv(2 * c.pre_channels, ch);
  std::vector<int> prev = c.l1_channels;
  for (const auto& layer : c.exchange_channels) {
    for (int out : layer)
      for (int in : prev) n += conv(in, out);
    prev = layer;
  }
  for (int in : prev) n += conv(in, c.l4_channels);
  const std::size_t head_cells = static_cast<std::size_t>(std::pow(c.head_kernel_size, c.dim));
  if (c.head == HeadKind::ascc)
    n += head_cells / 2 * c.l4_channels * c.dim;
  else
    n += head_cells * c.l4_channels * c.dim + c.dim;
  return n;
}

ParticleState random_state(int dim, std::size_t fluid, std::size_t boundary, std::mt19937_64& rng) {
  const double r = 0.005;
  const Matrix fp = test::random_matrix(fluid, dim, 0.0, 12 * r, rng);
  const Matrix fv = test::random_matrix(fluid, dim, -0.5, 0.5, rng);
  Matrix bp = test::random_matrix(boundary, dim, 0.0, 12 * r, rng);
  Matrix bn(boundary, dim);
  for (std::size_t i = 0; i < boundary; ++i) {
    bp(i, dim - 1) = -r;
    bn(i, dim - 1) = 1.0;
  }
  return make_state(fp, fv, bp, bn);
}

ArchitectureConfig small_config(int dim) {
  ArchitectureConfig c = default_architecture(dim);
  c.kernel_size = 4;
  c.head_kernel_size = 4;
  return c;
}

}  // namespace

TEST_CASE("default parameter counts") {
  for (int dim = 1; dim <= 3; ++dim) {
    auto c = default_architecture(dim);
    CHECK(init_params(c, 1).scalar_count() == expected_count(c));
    c.head = HeadKind::cconv;
    CHECK(init_params(c, 1).scalar_count() == expected_count(c));
  }
  CHECK(init_params(default_architecture(2), 1).scalar_count() == 514704);
}

TEST_CASE("initialization range, determinism and mean") {
  const auto c = default_architecture(2);
  const auto a = init_params(c, 42);
  const auto b = init_params(c, 42);
  CHECK(a.tensors == b.tensors);
  CHECK_FALSE(init_params(c, 43).tensors == a.tensors);
  double sum = 0.0;
  std::size_t n = 0;
  const auto layout = parameter_layout(c);
  for (std::size_t i = 0; i < layout.size(); ++i)
    for (double x : a.tensors[i].storage()) {
      if (layout[i].is_bias) {
        CHECK(x == 0.0);
        continue;
      }
      CHECK(x >= -0.05);
      CHECK(x <= 0.05);
      sum += x;
      ++n;
    }
  REQUIRE(n >= 100000);
  CHECK(std::abs(sum / n) < 0.002);
}

TEST_CASE("zero head gives zero corrections") {
  std::mt19937_64 rng(1);
  for (int dim = 1; dim <= 2; ++dim) {
    const auto c = small_config(dim);
    auto p = init_params(c, 3);
    zero_head(c, p);
    const auto s = random_state(dim, 12, 4, rng);
    const auto e = evaluate_network(c, p, s, std::vector<double>(dim, -9.81));
    for (double x : e.fluid_dx.storage()) CHECK(x == 0.0);
  }
}

TEST_CASE("head output sums to zero over fluid and boundary") {
  std::mt19937_64 rng(2);
  for (int dim = 1; dim <= 2; ++dim) {
    const auto c = small_config(dim);
    const auto p = init_params(c, 5);
    std::vector<double> g(dim, 0.0);
    g[0] = 3.0;
    g[dim - 1] -= 9.0;
    for (std::size_t nb : {std::size_t{0}, std::size_t{5}}) {
      const auto s = random_state(dim, 20, nb, rng);
      const auto e = evaluate_network(c, p, s, g);
      CHECK(e.union_output.rows() == 20 + nb);
      for (std::size_t a = 0; a < e.union_output.cols(); ++a) {
        double sum = 0.0, mag = 0.0;
        for (std::size_t i = 0; i < e.union_output.rows(); ++i) {
          sum += e.union_output(i, a);
          mag += std::abs(e.union_output(i, a));
        }
        CHECK(std::abs(sum) <= 1e-9 * mag);
      }
      if (nb == 0)
        for (int a = 0; a < dim; ++a) {
          double sum = 0.0, mag = 0.0;
          for (std::size_t i = 0; i < e.fluid_dx.rows(); ++i) {
            sum += e.fluid_dx(i, a);
            mag += std::abs(e.fluid_dx(i, a));
          }
          CHECK(std::abs(sum) <= 1e-9 * mag);
        }
    }
  }
}

TEST_CASE("translation invariance and permutation equivariance") {
  std::mt19937_64 rng(3);
  for (int dim = 1; dim <= 2; ++dim)
    for (Sampling sampling : {Sampling::voxel, Sampling::fps}) {
      auto c = small_config(dim);
      c.sampling = sampling;
      const auto p = init_params(c, 7);
      const std::vector<double> g(dim, -9.81);
      const auto s = random_state(dim, 15, 4, rng);
      const Matrix base = evaluate_network(c, p, s, g).fluid_dx;

      ParticleState moved = s;
      const Matrix shift = test::random_matrix(1, dim, -3.0, 3.0, rng);
      for (std::size_t i = 0; i < moved.size(); ++i)
        for (int a = 0; a < dim; ++a) moved.positions(i, a) += shift(0, a);
      const Matrix t = evaluate_network(c, p, moved, g).fluid_dx;
      double scale = 0.0;
      for (double x : base.storage()) scale = std::max(scale, std::abs(x));
      for (std::size_t i = 0; i < t.storage().size(); ++i)
        CHECK(std::abs(t.storage()[i] - base.storage()[i]) <= 1e-9 * scale);

      std::vector<std::size_t> perm(s.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      ParticleState shuffled;
      shuffled.positions = gather(s.positions, perm);
      shuffled.velocities = gather(s.velocities, perm);
      shuffled.accelerations = gather(s.accelerations, perm);
      shuffled.normals = gather(s.normals, perm);
      for (auto k : perm) {
        shuffled.masses.push_back(s.masses[k]);
        shuffled.types.push_back(s.types[k]);
      }
      const Matrix q = evaluate_network(c, p, shuffled, g).fluid_dx;
      // Fluid rows of the shuffled state, in their new order.
      std::vector<std::size_t> fluid_rank(s.size());
      std::size_t rank = 0;
      for (std::size_t i = 0; i < s.size(); ++i)
        if (s.types[i] == ParticleType::fluid) fluid_rank[i] = rank++;
      std::size_t row = 0;
      for (auto k : perm)
        if (s.types[k] == ParticleType::fluid) {
          for (int a = 0; a < dim; ++a) CHECK(q(row, a) == base(fluid_rank[k], a));
          ++row;
        }
    }
}

TEST_CASE("network backward matches finite differences") {
  std::mt19937_64 rng(4);
  auto c = small_config(1);
  c.output_scale = 100.0;
  auto p = init_params(c, 11);
  // Zero biases put featureless rows exactly on the relu kink.
  const auto layout = parameter_layout(c);
  for (std::size_t t = 0; t < layout.size(); ++t)
    if (layout[t].is_bias) p.tensors[t] = test::random_matrix(1, layout[t].cols, 0.01, 0.02, rng);
  const auto s = random_state(1, 5, 2, rng);
  const std::vector<double> g{-9.81};
  const Matrix w = test::random_matrix(5, 1, -1.0, 1.0, rng);
  const auto grads = network_backward(c, p, s, g, w);
  REQUIRE(grads.size() == p.tensors.size());
  auto loss = [&] { return test::dot(evaluate_network(c, p, s, g).fluid_dx, w); };
  double worst = 0.0, largest = 0.0;
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    auto& m = p.tensors[t];
    for (std::size_t i = 0; i < m.storage().size(); i += 7) {
      const double keep = m.storage()[i];
      const double h = 1e-6;
      m.storage()[i] = keep + h;
      const double up = loss();
      m.storage()[i] = keep - h;
      const double down = loss();
      m.storage()[i] = keep;
      const double fd = (up - down) / (2 * h);
      largest = std::max(largest, std::abs(fd));
      worst = std::max(worst, std::abs(fd - grads[t].storage()[i]));
    }
  }
  REQUIRE(largest > 0.0);
  CHECK(worst <= 1e-5 * largest);

  const auto zero = network_backward(c, p, s, g, Matrix(5, 1));
  for (const auto& m : zero)
    for (double x : m.storage()) CHECK(x == 0.0);
  double head = 0.0;
  for (double x : grads[p.index_of("head.half")].storage()) head += std::abs(x);
  CHECK(head > 0.0);
}
