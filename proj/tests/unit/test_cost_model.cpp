#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dynroute/cost_model.hpp"
#include "dynroute/errors.hpp"
#include "dynroute/grad_check.hpp"
#include "dynroute/madds_counter.hpp"
#include "dynroute/ops.hpp"

using namespace dynroute;

namespace {

SupernetSpec spec_4x3() {
  SupernetSpec s;
  s.num_layers = 4;
  s.num_scales = 3;
  s.channels_per_scale = {4, 8, 16};
  s.image_channels = 1;
  s.head_channels = 8;
  return s;
}

Tensor image(int size) {
  Tensor t({1, 1, size, size});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>((i * 37) % 11) / 11.0;
  return t;
}

// Multiplies counted inside the kernels while the supernet runs in infer mode.
madds::Tally executed_counts(const Supernet& net, const Tensor& img, const GateOverride& g) {
  madds::local_tally().reset();
  Tape tape(false);
  net.forward(tape, img, Mode::kInfer, g);
  return madds::local_tally();
}

}  // namespace

TEST_CASE("closed-form op counts") {
  CHECK(conv1x1_madds(8, 8, 64, 128) == 524288);
  CHECK(sepconv3x3_madds(4, 4, 8, 16) == 4 * 4 * 8 * (9 + 16));
}

TEST_CASE("node cost evaluates the max term plus the path terms") {
  const NodeCost k{100, 10, 0, 1};
  CHECK(node_cost({0, 0, 0}, k) == 0);
  CHECK(node_cost({0.5, 0, 1.0}, k) == 1.0 * 100 + 0.5 * 10 + 1.0 * 1);
  CHECK(node_cost({1, 1, 0}, k) == 100 + 10 + 0);
}

TEST_CASE("keep paths are free and constants are non-negative") {
  const CostTable t = compile_cost_table(SupernetSpec::desk_default(), 64, 64);
  REQUIRE(t.per_node.size() == 26);
  for (std::size_t i = 0; i < t.per_node.size(); ++i) {
    const NodeCost& k = t.per_node[i];
    CHECK(k.keep == 0);
    CHECK(k.conv > 0);
    CHECK(k.up >= 0);
    CHECK(k.down >= 0);
    CHECK((k.up == 0) == (t.nodes[i].scale == 0));
    CHECK((k.down == 0) == (t.nodes[i].scale == 3));
  }
}

TEST_CASE("desk supernet totals match the executed dense graph") {
  const SupernetSpec spec = SupernetSpec::desk_default();
  ParameterSet params;
  Supernet net(spec, params, 1);
  const CostTable t = compile_cost_table(spec, 64, 64);
  const madds::Tally tally = executed_counts(net, image(64), GateOverride::all_open());
  CHECK(static_cast<double>(tally[madds::Category::kRoutable]) == t.total);
  CHECK(t.total == 249152);

  madds::local_tally().reset();
  executed_counts(net, image(64), {});
  CHECK(static_cast<double>(madds::local_tally()[madds::Category::kRouter]) == t.router_total);
  CHECK(t.router_total == 117776);
}

TEST_CASE("each constant equals the count of its op run alone") {
  const SupernetSpec spec = spec_4x3();
  ParameterSet params;
  Supernet net(spec, params, 2);
  const CostTable t = compile_cost_table(spec, 32, 32);
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    const NodeId id = t.nodes[i];
    const int c = spec.channels_per_scale[static_cast<std::size_t>(id.scale)];
    const int n = spec.scale_size(32, id.scale);
    Tape tape(false);
    Var x = tape.constant(Tensor({1, c, n, n}, 0.5));
    const int node = net.node_index(id);

    madds::local_tally().reset();
    Var y = net.conv_block(tape, node, x);
    CHECK(static_cast<double>(madds::local_tally()[madds::Category::kRoutable]) == t.per_node[i].conv);

    const double* costs[] = {&t.per_node[i].up, &t.per_node[i].keep, &t.per_node[i].down};
    const GateMask valid = valid_directions(spec, id.scale);
    for (int d = 0; d < 3; ++d) {
      if (!valid[static_cast<std::size_t>(d)]) continue;
      madds::local_tally().reset();
      net.transform(tape, node, static_cast<Direction>(d), y);
      CHECK(static_cast<double>(madds::local_tally()[madds::Category::kRoutable]) == *costs[d]);
    }
  }
}

TEST_CASE("network cost equals executed multiplies on 100 random binary routes") {
  const SupernetSpec spec = spec_4x3();
  ParameterSet params;
  Supernet net(spec, params, 3);
  const CostTable t = compile_cost_table(spec, 32, 32);
  const Tensor img = image(32);
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<GateVector>> g(1, std::vector<GateVector>(t.nodes.size()));
    for (auto& node : g[0]) {
      for (auto& v : node) v = (rng() % 3 == 0) ? 0.0 : 1.0;
    }
    madds::local_tally().reset();
    Tape tape(false);
    auto out = net.forward(tape, img, Mode::kInfer, GateOverride::explicit_gates(g));
    const std::int64_t executed = madds::local_tally()[madds::Category::kRoutable];
    const double predicted = network_cost(out.routes[0], t, GateSource::kBinarized);
    CHECK(static_cast<std::int64_t>(predicted) == executed);
    CHECK(predicted == static_cast<double>(executed));
    CHECK(predicted <= t.total);
  }
}

TEST_CASE("network cost of all-closed and all-open routes") {
  const SupernetSpec spec = spec_4x3();
  const CostTable t = compile_cost_table(spec, 32, 32);
  RouteRecord closed, open;
  for (const NodeId& id : t.nodes) {
    NodeRoute a;
    a.node = id;
    a.gates = {0, 0, 0};
    a.open = binarize_gates(a.gates, 1e-4);
    closed.nodes.push_back(a);
    NodeRoute b = a;
    const GateMask v = valid_directions(spec, id.scale);
    for (int d = 0; d < 3; ++d) b.gates[static_cast<std::size_t>(d)] = v[static_cast<std::size_t>(d)] ? 1.0 : 0.0;
    b.open = binarize_gates(b.gates, 1e-4);
    open.nodes.push_back(b);
  }
  CHECK(network_cost(closed, t) == 0);
  CHECK(network_cost(open, t) == t.total);
  closed.nodes.pop_back();
  CHECK_THROWS_AS(network_cost(closed, t), UsageError);
}

TEST_CASE("opening a gate never lowers the cost") {
  const SupernetSpec spec = spec_4x3();
  const CostTable t = compile_cost_table(spec, 32, 32);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    RouteRecord r;
    for (const NodeId& id : t.nodes) {
      NodeRoute nr;
      nr.node = id;
      const GateMask v = valid_directions(spec, id.scale);
      for (int d = 0; d < 3; ++d) {
        nr.gates[static_cast<std::size_t>(d)] = v[static_cast<std::size_t>(d)] && u(rng) < 0.5 ? 1.0 : 0.0;
      }
      nr.open = binarize_gates(nr.gates, 1e-4);
      r.nodes.push_back(nr);
    }
    const double before = network_cost(r, t);
    auto& nr = r.nodes[rng() % r.nodes.size()];
    nr.gates[rng() % 3] = 1.0;
    nr.open = binarize_gates(nr.gates, 1e-4);
    CHECK(network_cost(r, t) >= before);
  }
}

TEST_CASE("continuous network cost matches the per-sample formula") {
  const SupernetSpec spec = spec_4x3();
  const CostTable t = compile_cost_table(spec, 32, 32);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  Tape tape;
  std::vector<Var> gates;
  std::vector<std::vector<GateVector>> raw(2, std::vector<GateVector>(t.nodes.size()));
  for (std::size_t n = 0; n < t.nodes.size(); ++n) {
    Tensor g({2, 3});
    for (int b = 0; b < 2; ++b) {
      for (int d = 0; d < 3; ++d) {
        const double v = u(rng);
        g[static_cast<std::size_t>(b * 3 + d)] = v;
        raw[static_cast<std::size_t>(b)][n][static_cast<std::size_t>(d)] = v;
      }
    }
    gates.push_back(tape.leaf(g));
  }
  Var c = network_cost(gates, t);
  for (int b = 0; b < 2; ++b) {
    double expect = 0;
    for (std::size_t n = 0; n < t.nodes.size(); ++n) expect += node_cost(raw[static_cast<std::size_t>(b)][n], t.per_node[n]);
    CHECK(c.value()[static_cast<std::size_t>(b)] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("network cost gradient matches central differences") {
  const CostTable t = compile_cost_table(spec_4x3(), 32, 32);
  std::vector<Shape> shapes(t.nodes.size(), Shape{3, 3});
  for (int seed = 0; seed < 10; ++seed) {
    auto report = grad_check(
        [&](Tape&, std::span<const Var> g) {
          // Normalized units keep the check well conditioned.
          return ops::scale(network_cost(g, t), 1.0 / t.total);
        },
        shapes, 1e-5, 1e-4, 300 + static_cast<std::uint64_t>(seed));
    INFO(report.detail);
    CHECK(report.passed);
  }
}

TEST_CASE("node cost gradient is the path constant plus the conv term on the unique max") {
  const NodeCost k{50, 7, 0, 3};
  Tape tape;
  Var g = tape.leaf(Tensor({1, 3}, {0.2, 0.9, 0.4}));
  tape.backward(ops::sum(node_cost(g, k)));
  CHECK(tape.grad(g.id).values() == std::vector<double>{7, 50, 3});
}

TEST_CASE("cost summary and CSV") {
  const CostTable t = compile_cost_table(spec_4x3(), 32, 32);
  const std::vector<double> per{t.total * 0.25, t.total * 0.75};
  const CostReport r = summarize_costs(per, t);
  CHECK(r.mean == doctest::Approx(t.total * 0.5));
  CHECK(r.max == per[1]);
  CHECK(r.min == per[0]);
  CHECK(r.stddev == doctest::Approx(t.total * 0.25));
  CHECK(r.total == t.total);
  CHECK(r.router_total == t.router_total);

  std::ostringstream os;
  write_cost_report_csv(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "sample_id,C_net,C_tot,ratio");
  std::vector<std::string> rows;
  while (std::getline(is, line)) rows.push_back(line.substr(0, line.find(',')));
  CHECK(rows == std::vector<std::string>{"0", "1", "mean", "max", "min", "std"});
}

TEST_CASE("cost table rejects sizes the trellis cannot downsample") {
  CHECK_THROWS_AS(compile_cost_table(SupernetSpec::desk_default(), 48, 64), UsageError);
}
