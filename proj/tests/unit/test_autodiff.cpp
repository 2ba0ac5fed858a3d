#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "dynroute/errors.hpp"
#include "dynroute/grad_check.hpp"
#include "dynroute/ops.hpp"
#include "gradient_cases.hpp"

using namespace dynroute;
using dynroute::testing::op_cases;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;
constexpr int kSeeds = 10;

}  // namespace

TEST_CASE("every op matches central differences on ten seeds") {
  for (const auto& op : op_cases()) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      auto report = grad_check(op.fn, op.shapes, kEps, kTol, 1000 + seed);
      INFO(op.name, " seed ", seed, ": ", report.detail);
      CHECK(report.passed);
      CHECK(report.max_rel_error < kTol);
    }
  }
}

TEST_CASE("identity op has zero gradient error") {
  std::vector<Shape> shapes{{3, 2}};
  auto report = grad_check([](Tape&, std::span<const Var> v) { return v[0]; }, shapes, kEps, kTol, 3);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("cosine of near-parallel vectors passes the gradient check") {
  std::vector<Tensor> point{Tensor({4}, {1.0, 2.0, 3.0, 4.0}),
                            Tensor({4}, {1.001, 2.0, 2.999, 4.002})};
  auto report = grad_check_at(
      [](Tape&, std::span<const Var> v) { return ops::cosine_similarity(v[0], v[1]); }, point,
      kEps, kTol);
  CHECK(report.passed);
}

TEST_CASE("backward of sum and sum of squares") {
  Tape tape;
  Tensor x({2, 2}, {1.0, -2.0, 3.5, 0.25});
  Var a = tape.leaf(x);
  tape.backward(ops::sum(a));
  for (double g : tape.grad(a.id).data()) CHECK(g == 1.0);

  Tape tape2;
  Var b = tape2.leaf(x);
  tape2.backward(ops::sum(ops::square(b)));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(tape2.grad(b.id)[i] == doctest::Approx(2 * x[i]));
}

TEST_CASE("backward on a non-scalar loss is a usage error") {
  Tape tape;
  Var a = tape.leaf(Tensor({3}, 1.0));
  CHECK_THROWS_AS(tape.backward(a), UsageError);
}

TEST_CASE("parameter gradients accumulate across repeated binds") {
  ParameterSet params;
  Parameter& p = params.add("w", {2});
  p.value = Tensor({2}, {1.0, 2.0});
  Tape tape;
  Var w1 = tape.param(p);
  Var w2 = tape.param(p);
  CHECK(w1.id == w2.id);
  tape.backward(ops::sum(ops::mul(w1, w2)));
  CHECK(p.grad[0] == doctest::Approx(2.0));
  CHECK(p.grad[1] == doctest::Approx(4.0));
}

TEST_CASE("add with zeros is the identity") {
  Tape tape;
  Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Var y = ops::add(tape.constant(x), tape.constant(Tensor::zeros_like(x)));
  CHECK(y.value() == x);
}

TEST_CASE("conv2d_1x1 matches hand dot products") {
  // x channel 0 = [1 2; 3 4], channel 1 = [5 6; 7 8]
  Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor w({3, 2}, {1, 0, 0, 1, 2, -1});
  Tape tape(false);
  Var y = ops::conv2d_1x1(tape.constant(x), tape.constant(w), 1);
  REQUIRE(y.shape() == Shape{1, 3, 2, 2});
  const double expect[] = {1, 2, 3, 4, 5, 6, 7, 8, 2 - 5, 4 - 6, 6 - 7, 8 - 8};
  for (int i = 0; i < 12; ++i) CHECK(y.value()[static_cast<std::size_t>(i)] == expect[i]);
}

TEST_CASE("conv2d_1x1 stride 2 keeps even positions") {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tape tape(false);
  Var y = ops::conv2d_1x1(tape.constant(x), tape.constant(Tensor({1, 1}, 2.0)), 2);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.value().values() == std::vector<double>{2, 6, 14, 18});
}

TEST_CASE("bilinear upsampling of a constant map is constant") {
  Tape tape(false);
  Var y = ops::bilinear_upsample_2x(tape.constant(Tensor({1, 2, 3, 5}, 0.7)));
  REQUIRE(y.shape() == Shape{1, 2, 6, 10});
  for (double v : y.value().data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("bilinear upsampling uses half-pixel centers") {
  // 1-D row [0, 4]: outputs sit at source coordinates -0.25, 0.25, 0.75, 1.25.
  Tape tape(false);
  Var y = ops::bilinear_upsample_2x(tape.constant(Tensor({1, 1, 1, 2}, {0.0, 4.0})));
  REQUIRE(y.shape() == Shape{1, 1, 2, 4});
  const double row[] = {0.0, 1.0, 3.0, 4.0};
  for (int j = 0; j < 4; ++j) {
    CHECK(y.value().at(0, 0, 0, j) == doctest::Approx(row[j]));
    CHECK(y.value().at(0, 0, 1, j) == doctest::Approx(row[j]));
  }
}

TEST_CASE("avg_pool_to uses floor and ceil bin edges") {
  Tensor x({1, 1, 1, 5}, {1, 2, 3, 4, 5});
  Tape tape(false);
  Var y = ops::avg_pool_to(tape.constant(x), 1, 2);
  // bins [0, 3) and [2, 5)
  CHECK(y.value()[0] == doctest::Approx(2.0));
  CHECK(y.value()[1] == doctest::Approx(4.0));
}

TEST_CASE("group norm output has zero mean and unit variance per sample") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(3.0, 2.0);
  Tensor x({2, 3, 4, 4});
  for (auto& v : x.data()) v = n(rng);
  Tape tape(false);
  Var y = ops::group_norm(tape.constant(x), tape.constant(Tensor({3}, 1.0)),
                          tape.constant(Tensor({3}, 0.0)));
  for (int b = 0; b < 2; ++b) {
    double s = 0, s2 = 0;
    for (int i = 0; i < 48; ++i) {
      double v = y.value()[static_cast<std::size_t>(b * 48 + i)];
      s += v;
      s2 += v * v;
    }
    CHECK(s / 48 == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
    CHECK(s2 / 48 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("max_over_vector sends the gradient to the first maximum") {
  Tape tape;
  Var v = tape.leaf(Tensor({4}, {0.5, 2.0, 2.0, 1.0}));
  tape.backward(ops::max_over_vector(v));
  CHECK(tape.grad(v.id).values() == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("cosine of a zero vector is zero with zero gradient") {
  Tape tape;
  Var u = tape.leaf(Tensor({3}, 0.0));
  Var v = tape.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
  Var c = ops::cosine_similarity(u, v);
  CHECK(c.item() == 0.0);
  tape.backward(c);
  for (double g : tape.grad(v.id).data()) CHECK(g == 0.0);
}

TEST_CASE("shape mismatch names the op") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}));
  Var b = tape.leaf(Tensor({3, 2}));
  try {
    ops::add(a, b);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::conv2d_1x1(tape.leaf(Tensor({1, 3, 2, 2})), tape.leaf(Tensor({2, 4})), 1),
                  ConfigError);
}

TEST_CASE("forward is deterministic across tapes") {
  Tensor x({1, 4, 8, 8});
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : x.data()) v = u(rng);
  Tensor dw({4, 3, 3}, 0.1), pw({4, 4}, 0.2);
  auto run = [&] {
    Tape tape;
    return ops::depthwise_separable_conv3x3(tape.leaf(x), tape.leaf(dw), tape.leaf(pw), 1).value();
  };
  CHECK(run() == run());
}
