#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "dynroute/errors.hpp"
#include "dynroute/grad_check.hpp"
#include "dynroute/ops.hpp"
#include "dynroute/similarity.hpp"

using namespace dynroute;

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return (na == 0 || nb == 0) ? 0.0 : d / std::sqrt(na * nb);
}

// Pairwise evaluation written out directly from the definition.
double pairwise_loss(const std::vector<std::vector<double>>& routes,
                     const std::vector<ScaleEncoding>& enc, double lo, double hi) {
  const std::size_t b = routes.size();
  double sum = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      int agree = 0;
      for (std::size_t k = 0; k < enc[i].size(); ++k) agree += enc[i][k] == enc[j][k];
      const double gt = static_cast<double>(agree) / static_cast<double>(enc[i].size()) * (hi - lo) + lo;
      const double gap = cosine(routes[i], routes[j]) - gt;
      sum += gap * gap;
    }
  }
  return sum / static_cast<double>(b);
}

Tensor to_matrix(const std::vector<std::vector<double>>& rows) {
  const int b = static_cast<int>(rows.size());
  const int k = static_cast<int>(rows[0].size());
  Tensor t({b, k});
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < k; ++j) t[static_cast<std::size_t>(i * k + j)] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return t;
}

}  // namespace

TEST_CASE("scale similarity counts agreeing positions") {
  CHECK(scale_similarity({1, 0, 1, 0}, {1, 1, 0, 0}) == 0.5);
  CHECK(scale_similarity({1, 0, 1, 1}, {1, 0, 1, 1}) == 1.0);
  CHECK(scale_similarity({1, 0, 1, 0}, {0, 1, 0, 1}) == 0.0);
  CHECK(scale_similarity({0, 1, 1, 0}, {1, 1, 0, 0}) == scale_similarity({1, 1, 0, 0}, {0, 1, 1, 0}));
  CHECK_THROWS_AS(scale_similarity({1, 0}, {1, 0, 0}), UsageError);
}

TEST_CASE("ground-truth similarity endpoints") {
  const SimilarityConfig cfg;
  CHECK(gt_similarity(0.0, cfg) == 0.6);
  CHECK(gt_similarity(1.0, cfg) == 0.95);
  CHECK(gt_similarity(0.5, cfg) == doctest::Approx(0.775));
}

TEST_CASE("similarity config bounds") {
  CHECK_NOTHROW(SimilarityConfig{}.validate());
  CHECK_THROWS_AS((SimilarityConfig{0.0, 0.5}.validate()), ConfigError);
  CHECK_THROWS_AS((SimilarityConfig{0.7, 0.6}.validate()), ConfigError);
  CHECK_THROWS_AS((SimilarityConfig{0.5, 1.2}.validate()), ConfigError);
}

TEST_CASE("path similarity") {
  const std::vector<double> a{0.2, 0.5, 0.0, 1.0};
  const std::vector<double> b{0.0, 0.0, 0.7, 0.0};
  CHECK(path_similarity(a, a) == doctest::Approx(1.0));
  CHECK(path_similarity(a, b) == 0.0);
  CHECK(path_similarity(std::vector<double>(4, 0.0), a) == 0.0);
  const std::vector<double> c{0.3, 0.1, 0.9, 0.4};
  CHECK(path_similarity(a, c) == doctest::Approx(cosine(a, c)));
  CHECK(path_similarity(a, c) == path_similarity(c, a));
}

TEST_CASE("path similarity gradient matches central differences") {
  std::vector<Shape> shapes{{12}, {12}};
  for (int seed = 0; seed < 10; ++seed) {
    auto report = grad_check(
        [](Tape&, std::span<const Var> v) { return path_similarity(v[0], v[1]); }, shapes, 1e-5,
        1e-4, 70 + static_cast<std::uint64_t>(seed));
    CHECK(report.passed);
  }
}

TEST_CASE("local loss with identical routes and encodings") {
  const int b = 5;
  std::vector<std::vector<double>> routes(b, std::vector<double>{0.3, 0.6, 0.9});
  std::vector<ScaleEncoding> enc(b, ScaleEncoding{1, 0, 0, 1});
  Tape tape;
  Var l = local_similarity_loss(tape.leaf(to_matrix(routes)), enc, SimilarityConfig{});
  CHECK(l.item() == doctest::Approx(10.0 / 5.0 * 0.05 * 0.05).epsilon(1e-12));
}

TEST_CASE("local loss is zero when path similarity equals the target") {
  // cos = 0.6 between these vectors, encodings fully disagree so the target is Min.
  std::vector<std::vector<double>> routes{{1.0, 0.0}, {0.6, 0.8}};
  std::vector<ScaleEncoding> enc{{1, 0}, {0, 1}};
  Tape tape;
  Var l = local_similarity_loss(tape.leaf(to_matrix(routes)), enc, SimilarityConfig{});
  CHECK(l.item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
}

TEST_CASE("local loss matches a pairwise brute force") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const int b = 3 + trial % 4;
    std::vector<std::vector<double>> routes(static_cast<std::size_t>(b), std::vector<double>(9));
    std::vector<ScaleEncoding> enc(static_cast<std::size_t>(b), ScaleEncoding(4));
    for (auto& r : routes) {
      for (auto& v : r) v = u(rng) < 0.2 ? 0.0 : u(rng);
    }
    for (auto& e : enc) {
      for (auto& s : e) s = static_cast<std::uint8_t>(rng() & 1);
    }
    Tape tape;
    Var l = local_similarity_loss(tape.leaf(to_matrix(routes)), enc, SimilarityConfig{});
    CHECK(l.item() == doctest::Approx(pairwise_loss(routes, enc, 0.6, 0.95)).epsilon(1e-12));
  }
}

TEST_CASE("local loss is order invariant and scales with 1/B") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<double>> routes(4, std::vector<double>(6));
  for (auto& r : routes) {
    for (auto& v : r) v = u(rng);
  }
  std::vector<ScaleEncoding> enc{{1, 0, 0, 0}, {1, 1, 0, 0}, {0, 0, 1, 1}, {1, 0, 0, 0}};
  auto loss = [&](const std::vector<std::vector<double>>& r, const std::vector<ScaleEncoding>& e) {
    Tape tape;
    return local_similarity_loss(tape.leaf(to_matrix(r)), e, SimilarityConfig{}).item();
  };
  const double base = loss(routes, enc);
  auto r2 = routes;
  auto e2 = enc;
  std::swap(r2[0], r2[3]);
  std::swap(e2[0], e2[3]);
  std::swap(r2[1], r2[2]);
  std::swap(e2[1], e2[2]);
  CHECK(loss(r2, e2) == doctest::Approx(base).epsilon(1e-13));

  // Two samples: one pair at B = 2. Duplicating gives B = 4 with the same gap on
  // four cross pairs plus two self pairs at cosine 1.
  std::vector<std::vector<double>> pair{routes[0], routes[2]};
  std::vector<ScaleEncoding> pair_enc{enc[0], enc[2]};
  const double gap_cross = loss(pair, pair_enc) * 2.0;
  const double gap_self = (1.0 - 0.95) * (1.0 - 0.95);
  std::vector<std::vector<double>> dup{routes[0], routes[2], routes[0], routes[2]};
  std::vector<ScaleEncoding> dup_enc{enc[0], enc[2], enc[0], enc[2]};
  CHECK(loss(dup, dup_enc) == doctest::Approx((4 * gap_cross + 2 * gap_self) / 4.0).epsilon(1e-13));
}

TEST_CASE("local loss with a single sample is zero") {
  Tape tape;
  std::vector<ScaleEncoding> enc{{1, 0, 0, 0}};
  Var l = local_similarity_loss(tape.leaf(Tensor({1, 6}, 0.5)), enc, SimilarityConfig{});
  CHECK(l.item() == 0.0);
}

TEST_CASE("local loss gradient matches central differences") {
  std::vector<ScaleEncoding> enc{{1, 0, 0, 0}, {1, 1, 0, 0}, {0, 1, 1, 1}, {1, 0, 0, 0}};
  std::vector<Shape> shapes{{4, 9}};
  for (int seed = 0; seed < 10; ++seed) {
    auto report = grad_check(
        [&](Tape&, std::span<const Var> v) {
          return local_similarity_loss(v[0], enc, SimilarityConfig{});
        },
        shapes, 1e-5, 1e-4, 90 + static_cast<std::uint64_t>(seed));
    INFO(report.detail);
    CHECK(report.passed);
  }
}

TEST_CASE("route flattening is node-major then direction") {
  Tape tape;
  std::vector<Var> gates{tape.leaf(Tensor({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6})),
                         tape.leaf(Tensor({2, 3}, {0.7, 0.8, 0.9, 1.0, 0.0, 0.5}))};
  Var r = flatten_routes(gates);
  REQUIRE(r.shape() == Shape{2, 6});
  CHECK(r.value().values() ==
        std::vector<double>{0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 0.4, 0.5, 0.6, 1.0, 0.0, 0.5});
}

TEST_CASE("recorded route vectors optionally mask closed paths") {
  RouteRecord rec;
  NodeRoute a;
  a.node = {1, 0};
  a.gates = {0.0, 0.8, 5e-5};
  a.open = binarize_gates(a.gates, 1e-4);
  rec.nodes.push_back(a);
  CHECK(route_vector(rec, false) == std::vector<double>{0.0, 0.8, 5e-5});
  CHECK(route_vector(rec, true) == std::vector<double>{0.0, 0.8, 0.0});
}

TEST_CASE("similarity matrix CSV") {
  std::ostringstream os;
  write_similarity_matrix_csv(os, {{1.0, 0.5}, {0.5, 1.0}});
  CHECK(os.str() == "i,0,1\n0,1,0.5\n1,0.5,1\n");
}
