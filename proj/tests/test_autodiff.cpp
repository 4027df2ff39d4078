#include <doctest.h>

#include "dmcf/autodiff.hpp"
#include "dmcf/layers.hpp"
#include "test_support.hpp"

using namespace dmcf;

namespace {

// Builds f(inputs) on a fresh tape, checks d<w, f>/d input against
// central differences for every input.
void check_op(std::vector<Matrix> inputs,
              const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& op,
              std::mt19937_64& rng, double tol = 1e-6) {
  Matrix w;
  auto evaluate = [&](bool record, std::vector<Matrix>* grads) {
    ad::Tape t(record);
    std::vector<ad::Var> vars;
    for (const auto& m : inputs) vars.push_back(t.variable(m));
    const ad::Var out = op(t, vars);
    if (w.empty()) w = test::random_matrix(t.value(out).rows(), t.value(out).cols(), -1.0, 1.0, rng);
    if (grads) {
      t.backward(out, w);
      for (auto v : vars) grads->push_back(t.grad(v));
    }
    return test::dot(t.value(out), w);
  };
  std::vector<Matrix> grads;
  evaluate(true, &grads);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Matrix fd = test::numeric_gradient([&] { return evaluate(false, nullptr); }, inputs[i]);
    CHECK(test::max_rel_error(grads[i], fd) <= tol);
  }
}

}  // namespace

TEST_CASE("elementwise and structural ops match finite differences") {
  std::mt19937_64 rng(1);
  auto m = [&](std::size_t r, std::size_t c) { return test::random_matrix(r, c, -1.0, 1.0, rng); };
  using V = std::vector<ad::Var>;
  check_op({m(3, 2), m(3, 2)}, [](ad::Tape& t, const V& v) { return ad::add(t, v[0], v[1]); }, rng);
  check_op({m(3, 2), m(3, 2)}, [](ad::Tape& t, const V& v) { return ad::sub(t, v[0], v[1]); }, rng);
  check_op({m(3, 2)}, [](ad::Tape& t, const V& v) { return ad::scale(t, v[0], -2.5); }, rng);
  check_op({m(3, 2), m(3, 2)}, [](ad::Tape& t, const V& v) { return ad::axpby(t, 0.3, v[0], 4.0, v[1]); }, rng);
  check_op({m(3, 2)},
           [](ad::Tape& t, const V& v) {
             const double row[2] = {1.0, -2.0};
             return ad::add_row_constant(t, v[0], row);
           },
           rng);
  check_op({m(2, 2), m(2, 2), m(2, 2)}, [](ad::Tape& t, const V& v) { return ad::add_n(t, v); }, rng);
  check_op({m(4, 3)}, [](ad::Tape& t, const V& v) { return ad::relu(t, v[0]); }, rng);
  check_op({m(3, 2), m(3, 1)}, [](ad::Tape& t, const V& v) { return ad::concat_cols(t, v[0], v[1]); }, rng);
  check_op({m(3, 2), m(1, 2)}, [](ad::Tape& t, const V& v) { return ad::concat_rows(t, v[0], v[1]); }, rng);
  check_op({m(4, 2)}, [](ad::Tape& t, const V& v) { return ad::gather_rows(t, v[0], {3, 0, 0, 2}); }, rng);
  check_op({m(5, 2)}, [](ad::Tape& t, const V& v) { return ad::slice_rows(t, v[0], 1, 3); }, rng);
  const double g[2] = {3.0, -1.0};
  const GravityFrame frame(g);
  for (bool to : {true, false})
    check_op({m(4, 2)}, [&](ad::Tape& t, const V& v) { return ad::rotate_rows(t, v[0], frame, to); }, rng);
}

TEST_CASE("convolution ops on the tape match finite differences") {
  std::mt19937_64 rng(2);
  KernelSpec cs{2, 4, 2, 3, Window::poly6, 0.6};
  const Matrix data = test::random_matrix(6, 2, 0.0, 1.0, rng);
  const Matrix query = test::random_matrix(5, 2, 0.0, 1.0, rng);
  auto nb = std::make_shared<NeighborList>(fixed_radius_neighbors(data, query, 0.6));
  check_op({test::random_matrix(6, 2, -1, 1, rng), data, query, test::random_matrix(cs.rows(), 3, -1, 1, rng),
            test::random_matrix(1, 3, -1, 1, rng)},
           [&](ad::Tape& t, const std::vector<ad::Var>& v) {
             return ad::cconv(t, v[0], v[1], v[2], v[3], v[4], cs, nb);
           },
           rng, 1e-5);

  KernelSpec as{2, 4, 2, 2, Window::peak, 0.6};
  auto snb = std::make_shared<NeighborList>(fixed_radius_neighbors(data, data, 0.6));
  check_op({test::random_matrix(6, 2, -1, 1, rng), data,
            test::random_matrix(half_cell_count(as) * 2, 2, -1, 1, rng)},
           [&](ad::Tape& t, const std::vector<ad::Var>& v) {
             return ad::ascc(t, v[0], v[1], v[2], as, 1, snb);
           },
           rng, 1e-5);
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  ad::Tape t;
  Matrix x(1, 1);
  x(0, 0) = 2.0;
  const ad::Var a = t.variable(x);
  const ad::Var b = ad::add(t, a, a);
  const ad::Var c = ad::add(t, b, a);
  t.backward(c);
  CHECK(t.grad(a)(0, 0) == 3.0);
}

TEST_CASE("constants receive no gradient and a non-recording tape stores no closures") {
  ad::Tape t;
  const ad::Var c = t.constant(Matrix(2, 2));
  const ad::Var v = t.variable(Matrix(2, 2));
  const ad::Var s = ad::add(t, c, v);
  Matrix seed(2, 2);
  seed.fill(1.0);
  t.backward(s, seed);
  CHECK_FALSE(t.requires_grad(c));
  CHECK(t.grad(v)(1, 1) == 1.0);

  ad::Tape off(false);
  const ad::Var x = off.variable(Matrix(1, 1));
  CHECK_FALSE(off.requires_grad(ad::relu(off, x)));
}
