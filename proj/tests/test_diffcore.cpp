#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cdm/diffcore.hpp"
#include "grad_cases.hpp"

using namespace cdm;

TEST_CASE("forward values") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(std::isfinite(sigmoid(-800.0)));

  Graph g;
  Matrix a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  const NodeId prod = g.matmul(g.constant(Matrix::Identity(2, 2)), g.constant(a));
  CHECK(evaluate(g, prod) == a);

  Matrix y(1, 1), r(1, 1);
  y << 0.5;
  r << 1.0;
  const NodeId loss = g.bce_loss(g.constant(y), r);
  CHECK(evaluate(g, loss)(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("sigmoid outputs stay strictly inside the unit interval for moderate inputs") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 10000; ++i) {
    const double s = sigmoid(u(rng));
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("shape mismatches name the op") {
  Graph g;
  const NodeId a = g.constant(Matrix::Ones(2, 3));
  const NodeId b = g.constant(Matrix::Ones(2, 3));
  CHECK_THROWS_AS(g.matmul(a, b), DimensionError);
  CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), DimensionError);
  CHECK_THROWS_AS(g.subtract(a, g.constant(Matrix::Ones(3, 2))), DimensionError);
  CHECK_THROWS_AS(g.add_bias(a, g.constant(Matrix::Ones(1, 2))), DimensionError);
  CHECK_THROWS_AS(g.backward(a), DimensionError);
}

TEST_CASE("elementary gradients") {
  ParamTensor z("z", Matrix::Zero(1, 1), false);
  Graph g;
  const NodeId s = g.sigmoid(g.parameter(z));
  const auto grads = g.backward(s);
  REQUIRE(grads.size() == 1);
  CHECK(grads[0].grad(0, 0) == doctest::Approx(0.25));

  ParamTensor y("y", Matrix::Constant(1, 1, 0.5), false);
  Graph g2;
  Matrix target(1, 1);
  target << 1.0;
  const auto bce = g2.backward(g2.bce_loss(g2.parameter(y), target));
  REQUIRE(bce.size() == 1);
  CHECK(bce[0].grad(0, 0) == doctest::Approx(-2.0));
}

TEST_CASE("shared nodes accumulate gradients") {
  ParamTensor p("p", Matrix::Constant(1, 1, 3.0), false);
  Graph g;
  const NodeId x = g.parameter(p);
  const NodeId sq = g.mul(x, x);
  const auto grads = g.backward(g.mul(sq, x));
  CHECK(grads[0].grad(0, 0) == doctest::Approx(27.0));
}

TEST_CASE("a linear graph matches central differences to machine precision") {
  std::mt19937_64 rng(1);
  ParamTensor a("a", testing::uniform(3, 4, -1, 1, rng), false);
  const Matrix u = testing::uniform(1, 3, -1, 1, rng);
  const Matrix v = testing::uniform(4, 1, -1, 1, rng);
  ParamTensor* params[] = {&a};
  const auto check = finite_difference_check(
      [&](Graph& g) { return testing::reduce(g, g.parameter(a), u, v); }, params, "linear");
  CHECK(check.passed);
  CHECK(check.max_relative_error < 1e-8);
}

TEST_CASE("every op passes the finite-difference check on random shapes") {
  std::mt19937_64 rng(42);
  for (Op op : testing::differentiable_ops()) {
    CAPTURE(op_name(op));
    for (int instance = 0; instance < 20; ++instance) {
      auto oc = testing::make_op_case(op, rng);
      GradientCheckOptions opts;
      opts.seed = static_cast<std::uint64_t>(instance);
      const auto check = finite_difference_check(oc.build, oc.params, std::string(op_name(op)), opts);
      CHECK(check.checked > 0);
      CHECK(check.max_relative_error <= 1e-3);
    }
  }
}

TEST_CASE("a corrupted backward rule is flagged") {
  std::mt19937_64 rng(8);
  for (Op op : testing::differentiable_ops()) {
    CAPTURE(op_name(op));
    auto oc = testing::make_op_case(op, rng);
    GradientCheckOptions opts;
    opts.faulty_op = op;
    CHECK_FALSE(finite_difference_check(oc.build, oc.params, "faulty", opts).passed);
  }
}

TEST_CASE("gradient report lookup") {
  GradientReport report;
  report.checks.push_back({"matmul", 3, 1e-9, true});
  report.checks.push_back({"sigmoid", 3, 0.2, false});
  CHECK_FALSE(report.all_passed());
  REQUIRE(report.find("sigmoid") != nullptr);
  CHECK(report.find("sigmoid")->max_relative_error == 0.2);
  CHECK(report.find("exp") == nullptr);
}

TEST_CASE("xavier normal initialisation") {
  CHECK(xavier_normal_init(3, 4, 5u) == xavier_normal_init(3, 4, 5u));
  CHECK(xavier_normal_init(3, 4, 5u) != xavier_normal_init(3, 4, 6u));
  CHECK_THROWS_AS(xavier_normal_init(0, 4, 1u), DimensionError);

  auto sample_std = [](const Matrix& m) {
    const double mean = m.mean();
    return std::sqrt((m.array() - mean).square().sum() / static_cast<double>(m.size() - 1));
  };
  // fan_in = fan_out = 1: every draw comes from N(0, 1).
  Matrix ones(10000, 1);
  std::mt19937_64 rng(9);
  for (Eigen::Index i = 0; i < ones.rows(); ++i) ones(i, 0) = xavier_normal_init(1, 1, rng)(0, 0);
  CHECK(sample_std(ones) == doctest::Approx(1.0).epsilon(0.05));

  Matrix fifty(10000, 1);
  for (Eigen::Index i = 0; i < 4; ++i) fifty.middleRows(i * 2500, 2500) = xavier_normal_init(50, 50, rng).reshaped<Eigen::RowMajor>(2500, 1);
  CHECK(sample_std(fifty) == doctest::Approx(std::sqrt(1.0 / 50.0)).epsilon(0.05));
}

TEST_CASE("adam first step and hand-computed second step") {
  AdamConfig cfg;
  cfg.lr = 0.001;
  ParamTensor p("p", Matrix::Constant(1, 1, 1.0), false);
  adam_step(p, Matrix::Constant(1, 1, 1.0), cfg);
  CHECK(p.step == 1);
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.001).epsilon(1e-9));

  // Second step with gradient -0.5, evaluated from the textbook recurrences.
  const double m1 = 0.1, v1 = 0.001;
  const double m2 = 0.9 * m1 + 0.1 * -0.5;
  const double v2 = 0.999 * v1 + 0.001 * 0.25;
  const double mhat = m2 / (1.0 - 0.81);
  const double vhat = v2 / (1.0 - 0.999 * 0.999);
  const double expected = p.value(0, 0) - 0.001 * mhat / (std::sqrt(vhat) + 1e-8);
  adam_step(p, Matrix::Constant(1, 1, -0.5), cfg);
  CHECK(p.value(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.adam_m(0, 0) == doctest::Approx(m2).epsilon(1e-15));
  CHECK(p.adam_v(0, 0) == doctest::Approx(v2).epsilon(1e-15));
}

TEST_CASE("adam with zero gradient leaves a fresh tensor unchanged") {
  std::mt19937_64 rng(2);
  const Matrix init = testing::uniform(3, 3, -1, 1, rng);
  ParamTensor p("p", init, false);
  adam_step(p, Matrix::Zero(3, 3), AdamConfig{});
  CHECK(p.value == init);
}

TEST_CASE("adam rejects non-finite and misshapen gradients") {
  ParamTensor p("p", Matrix::Zero(2, 2), false);
  Matrix g = Matrix::Zero(2, 2);
  g(1, 0) = std::nan("");
  CHECK_THROWS_AS(adam_step(p, g, AdamConfig{}), NumericError);
  g(1, 0) = INFINITY;
  CHECK_THROWS_AS(adam_step(p, g, AdamConfig{}), NumericError);
  CHECK_THROWS_AS(adam_step(p, Matrix::Zero(1, 2), AdamConfig{}), DimensionError);
  CHECK(p.step == 0);
}

TEST_CASE("projection") {
  Matrix m(1, 2);
  m << -0.3, 0.5;
  const Matrix out = project_nonnegative(m);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == 0.5);
  const Matrix pos = Matrix::Constant(2, 2, 0.25);
  CHECK(project_nonnegative(pos) == pos);

  ParamTensor c("c", Matrix::Constant(1, 1, 0.0005), true);
  adam_step(c, Matrix::Constant(1, 1, 1e3), AdamConfig{});
  CHECK(c.value(0, 0) == 0.0);
}

TEST_CASE("constrained tensors stay non-negative over random steps") {
  std::mt19937_64 rng(17);
  ParamTensor c("c", project_nonnegative(testing::uniform(4, 5, -0.1, 0.1, rng)), true);
  AdamConfig cfg;
  cfg.lr = 0.05;
  for (int step = 0; step < 500; ++step) {
    adam_step(c, testing::uniform(4, 5, -1.0, 3.0, rng), cfg);
    REQUIRE(c.value.minCoeff() >= 0.0);
  }
}

TEST_CASE("identical seeds and op sequences give bit-identical parameters") {
  auto run = [] {
    std::mt19937_64 rng(123);
    auto oc = testing::make_op_case(Op::MatMul, rng);
    for (int step = 0; step < 20; ++step) {
      Graph g;
      const auto grads = g.backward(oc.build(g));
      for (const auto& pg : grads) {
        for (auto* p : oc.params) {
          if (p == pg.param) adam_step(*p, pg.grad, AdamConfig{});
        }
      }
    }
    std::vector<Matrix> out;
    for (auto* p : oc.params) out.push_back(p->value);
    return out;
  };
  CHECK(run() == run());
}
