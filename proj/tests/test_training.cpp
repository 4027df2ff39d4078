#include <doctest.h>

#include "dmcf/errors.hpp"
#include "dmcf/reference_sph.hpp"
#include "dmcf/training.hpp"
#include "test_support.hpp"

using namespace dmcf;

namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix m(v.size(), 1);
  std::size_t i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

ArchitectureConfig small_config(int dim) {
  ArchitectureConfig c = default_architecture(dim);
  c.kernel_size = 4;
  c.head_kernel_size = 4;
  return c;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  const Schedules s = make_schedules(TrainConfig{});
  CHECK(s.learning_rate(0) == 0.001);
  CHECK(s.learning_rate(10000) == 0.001);
  CHECK(s.learning_rate(19999) == 0.001);
  CHECK(s.learning_rate(20000) == 0.0005);
  CHECK(s.learning_rate(24999) == 0.0005);
  CHECK(s.learning_rate(25000) == 0.00025);
  CHECK(s.learning_rate(30000) == 0.000125);
  double prev = s.learning_rate(0);
  for (int it = 0; it < 50000; it += 250) {
    CHECK(s.learning_rate(it) <= prev);
    prev = s.learning_rate(it);
  }
}

TEST_CASE("rollout and warmup schedules") {
  const Schedules s = make_schedules(TrainConfig{});
  CHECK(s.rollout_length(14999) == 3);
  CHECK(s.rollout_length(15000) == 5);
  CHECK(s.warmup_limit(9999) == 0);
  CHECK(s.warmup_limit(10000) == 5);
  CHECK(s.warmup_limit(19999) == 5);
  CHECK(s.warmup_limit(20000) == 10);
  CHECK(s.warmup_limit(30000) == 20);
  TrainConfig off;
  off.warmup = false;
  CHECK(make_schedules(off).warmup_limit(40000) == 0);
}

TEST_CASE("schedules scale with the iteration budget") {
  TrainConfig c;
  c.iterations = 5000;
  const Schedules s = make_schedules(c);
  CHECK(s.learning_rate(1999) == 0.001);
  CHECK(s.learning_rate(2000) == 0.0005);
  CHECK(s.learning_rate(2500) == 0.00025);
  CHECK(s.rollout_length(1499) == 3);
  CHECK(s.rollout_length(1500) == 5);
  CHECK(s.warmup_limit(999) == 0);
  CHECK(s.warmup_limit(1000) == 5);
  CHECK(s.warmup_limit(2000) == 10);
  CHECK(s.warmup_limit(3000) == 20);
}

TEST_CASE("frame loss examples") {
  CHECK(loss_frame(col({0.1, 0.2}), col({0.1, 0.2}), 0.05) == 0.0);
  CHECK(loss_frame(col({0.01}), col({0.0}), 0.05) == doctest::Approx(0.01));
  // Two close particles: c = 1 each, c_avg = 1.
  CHECK(loss_frame(col({0.0, 0.02}), col({0.01, 0.03}), 0.05) ==
        doctest::Approx(0.01 * std::exp(-1.0)));
  CHECK(loss_frame(col({0.0, 0.02}), col({0.01, 0.03}), 0.05) == doctest::Approx(0.0036788).epsilon(1e-4));
  CHECK_THROWS_AS(loss_frame(col({0.0}), col({0.0, 1.0}), 0.05), InputError);

  const std::vector<Matrix> pred{col({0.1}), col({0.3})};
  const std::vector<Matrix> target{col({0.0}), col({0.0})};
  CHECK(rollout_loss(pred, target, 0.05) == doctest::Approx(0.2));
  CHECK(rollout_loss({col({0.1})}, {col({0.0})}, 0.05) == loss_frame(col({0.1}), col({0.0}), 0.05));
  CHECK_THROWS_AS(rollout_loss(pred, {col({0.0})}, 0.05), InputError);
}

TEST_CASE("frame loss on the tape matches finite differences") {
  std::mt19937_64 rng(1);
  Matrix pred = test::random_matrix(8, 2, 0.0, 0.05, rng);
  const Matrix target = test::random_matrix(8, 2, 0.0, 0.05, rng);
  ad::Tape t;
  const ad::Var p = t.variable(pred);
  const ad::Var l = ad::loss_frame(t, p, target, 0.02);
  CHECK(t.value(l)(0, 0) == doctest::Approx(loss_frame(pred, target, 0.02)).epsilon(1e-14));
  t.backward(l);
  const Matrix fd = test::numeric_gradient([&] { return loss_frame(pred, target, 0.02); }, pred, 1e-9);
  CHECK(test::max_rel_error(t.grad(p), fd) <= 1e-4);
}

TEST_CASE("position noise") {
  Matrix bp(2, 1), bn(2, 1);
  bp(0, 0) = -0.01;
  bn.fill(1.0);
  Matrix fp(50000, 2), fv(50000, 2);
  const auto s = make_state(fp, fv, Matrix(2, 2), Matrix(2, 2));
  std::mt19937_64 rng(3);
  CHECK(add_noise(s, 0.0, rng).positions == s.positions);
  const double std = 0.1 * 0.005;
  const auto n = add_noise(s, std, rng);
  double sum2 = 0.0;
  for (auto i : s.fluid_indices())
    for (int a = 0; a < 2; ++a) sum2 += n.positions(i, a) * n.positions(i, a);
  CHECK(std::sqrt(sum2 / 100000.0) == doctest::Approx(std).epsilon(0.02));
  for (auto i : s.boundary_indices()) CHECK(n.positions(i, 0) == s.positions(i, 0));
  CHECK(n.velocities == s.velocities);
}

TEST_CASE("warmup") {
  SolverConfig cfg;
  std::vector<int> counts{10};
  const auto scene = gen_column_dataset(counts, 20, cfg).front();
  const auto arch = small_config(1);
  const auto params = init_params(arch, 3);

  const auto none = warmup(scene, 4, arch, params, 0, 0.05, cfg.support());
  CHECK(none.index == 4);
  CHECK(none.state.positions == scene.frames[4].positions);

  const auto some = warmup(scene, 2, arch, params, 5, 1e9, cfg.support());
  CHECK(some.steps == 5);
  CHECK(some.index == 7);
  CHECK(some.errors.size() == 5);

  const auto strict = warmup(scene, 2, arch, params, 5, 0.0, cfg.support());
  CHECK(strict.stopped_early);
  CHECK(strict.steps <= 1);
  CHECK(strict.index == 2 + strict.steps);
}

TEST_CASE("adam") {
  ModelParams p;
  p.names = {"w"};
  p.tensors = {col({1.0, -2.0, 0.5})};
  OptimizerState opt = make_optimizer(p);
  adam_step(p, {col({0.3, -4.0, 0.0})}, opt, 0.01);
  CHECK(p.tensors[0](0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p.tensors[0](1, 0) == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(p.tensors[0](2, 0) == 0.5);

  const Matrix before = p.tensors[0];
  const double m0 = opt.m[0](0, 0), v0 = opt.v[0](0, 0);
  ModelParams q = p;
  OptimizerState opt_q = opt;
  // Zero gradient: moments decay, parameters still move by the remaining momentum.
  adam_step(q, {Matrix(3, 1)}, opt_q, 0.0);
  CHECK(q.tensors[0] == before);
  CHECK(opt_q.m[0](0, 0) == doctest::Approx(0.9 * m0));
  CHECK(opt_q.v[0](0, 0) == doctest::Approx(0.999 * v0));

  Matrix bad = col({1.0, std::nan(""), 0.0});
  CHECK_THROWS_AS(adam_step(p, {bad}, opt, 0.01), OptimizerError);
  CHECK(p.tensors[0] == before);
}

TEST_CASE("rollout loss gradient through two steps") {
  std::mt19937_64 rng(5);
  for (int dim = 1; dim <= 2; ++dim) {
    auto arch = small_config(dim);
    arch.output_scale = 100.0;
    auto params = init_params(arch, 9);
    // Zero biases put featureless rows exactly on the relu kink.
    const auto layout = parameter_layout(arch);
    for (std::size_t t = 0; t < layout.size(); ++t)
      if (layout[t].is_bias) params.tensors[t] = test::random_matrix(1, layout[t].cols, 0.01, 0.02, rng);
    const Matrix fp = test::random_matrix(6, dim, 0.0, 0.04, rng);
    const Matrix fv = test::random_matrix(6, dim, -0.2, 0.2, rng);
    Matrix bp(2, dim), bn(2, dim);
    bp(1, 0) = 0.01;
    for (int i = 0; i < 2; ++i) {
      bp(i, dim - 1) -= 0.01;
      bn(i, dim - 1) = 1.0;
    }
    const auto start = make_state(fp, fv, bp, bn);
    std::vector<double> g(dim, 0.0);
    g[dim - 1] = -9.81;
    const std::vector<Matrix> targets{test::random_matrix(6, dim, 0.0, 0.04, rng),
                                      test::random_matrix(6, dim, 0.0, 0.04, rng)};
    const auto res = rollout_loss_grad(arch, params, start, targets, g, 0.0025, true);
    double worst = 0.0, largest = 0.0;
    for (std::size_t t = 0; t < params.tensors.size(); ++t)
      for (std::size_t i = 0; i < params.tensors[t].size(); i += 11) {
        double& x = params.tensors[t].data()[i];
        const double keep = x, h = 1e-6;
        x = keep + h;
        const double up = rollout_loss_grad(arch, params, start, targets, g, 0.0025, false).loss;
        x = keep - h;
        const double down = rollout_loss_grad(arch, params, start, targets, g, 0.0025, false).loss;
        x = keep;
        const double fd = (up - down) / (2 * h);
        largest = std::max(largest, std::abs(fd));
        worst = std::max(worst, std::abs(fd - res.grads[t].data()[i]));
      }
    REQUIRE(largest > 0.0);
    CHECK(worst <= 1e-4 * largest);
  }
}

TEST_CASE("training: zero iterations, determinism and threads") {
  SolverConfig cfg;
  const auto data = gen_column_dataset({3, 5}, 20, cfg);
  const auto arch = small_config(1);
  TrainConfig tc;
  tc.iterations = 0;
  CHECK(train(data, arch, tc).params.tensors == init_params(arch, tc.seed).tensors);

  tc.iterations = 20;
  tc.log_interval = 5;
  const auto a = train(data, arch, tc);
  const auto b = train(data, arch, tc);
  tc.threads = 2;
  const auto c = train(data, arch, tc);
  CHECK(a.params.tensors == b.params.tensors);
  CHECK(a.params.tensors == c.params.tensors);
  REQUIRE(a.log.size() == 4);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].loss == c.log[i].loss);
  }
  CHECK_THROWS_AS(train({}, arch, tc), InputError);
}

TEST_CASE("training finds the zero network on ballistic data") {
  SolverConfig cfg;
  const auto data = gen_freefall_dataset({1}, 0.2, 30, cfg);
  auto arch = small_config(1);
  arch.head = HeadKind::cconv;
  arch.output_scale = 0.01;
  TrainConfig tc;
  tc.iterations = 500;
  tc.noise_ratio = 0.0;
  tc.warmup = false;
  tc.log_interval = 50;
  const auto res = train(data, arch, tc);
  CHECK(res.log.back().loss < 1e-6);
}
