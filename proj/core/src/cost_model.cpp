#include "dynroute/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "dynroute/errors.hpp"
#include "dynroute/ops.hpp"

namespace dynroute {

double conv1x1_madds(int out_h, int out_w, int c_in, int c_out) {
  return static_cast<double>(out_h) * out_w * c_in * c_out;
}

double sepconv3x3_madds(int out_h, int out_w, int c_in, int c_out) {
  return static_cast<double>(out_h) * out_w * c_in * (9 + c_out);
}

CostTable compile_cost_table(const SupernetSpec& spec, int input_height, int input_width) {
  spec.validate();
  const int mult = spec.input_multiple();
  if (input_height <= 0 || input_width <= 0 || input_height % mult || input_width % mult) {
    throw UsageError("cost table: input " + std::to_string(input_height) + "x" +
                     std::to_string(input_width) + " is not divisible by " + std::to_string(mult));
  }
  CostTable table;
  table.input_height = input_height;
  table.input_width = input_width;
  const auto& ch = spec.channels_per_scale;
  for (int l = 1; l <= spec.num_layers; ++l) {
    for (int s = 0; s < spec.scales_at_layer(l); ++s) {
      const int h = spec.scale_size(input_height, s);
      const int w = spec.scale_size(input_width, s);
      const int c = ch[static_cast<std::size_t>(s)];
      NodeCost k;
      k.conv = sepconv3x3_madds(h, w, c, c);
      if (s > 0) k.up = conv1x1_madds(h, w, c, ch[static_cast<std::size_t>(s - 1)]);
      if (s < spec.num_scales - 1) {
        k.down = conv1x1_madds((h - 1) / 2 + 1, (w - 1) / 2 + 1, c,
                               ch[static_cast<std::size_t>(s + 1)]);
      }
      table.nodes.push_back(NodeId{l, s});
      table.per_node.push_back(k);
      table.router.push_back(conv1x1_madds(2, 2, c, c) + 3.0 * c);
      table.total += k.conv + k.up + k.keep + k.down;
      table.router_total += table.router.back();
    }
  }
  return table;
}

double node_cost(const GateVector& g, const NodeCost& k) {
  const double gmax = *std::max_element(g.begin(), g.end());
  return gmax * k.conv + g[0] * k.up + g[1] * k.keep + g[2] * k.down;
}

Var node_cost(Var gates, const NodeCost& k) {
  const double coeff[kNumDirections] = {k.up, k.keep, k.down};
  return ops::add(ops::scale(ops::rowwise_max(gates), k.conv), ops::matvec_const(gates, coeff));
}

double network_cost(const RouteRecord& route, const CostTable& table, GateSource source) {
  if (route.nodes.size() != table.nodes.size()) {
    throw UsageError("route has " + std::to_string(route.nodes.size()) +
                     " nodes, cost table has " + std::to_string(table.nodes.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < route.nodes.size(); ++i) {
    const NodeRoute& nr = route.nodes[i];
    if (nr.node != table.nodes[i]) throw UsageError("route node order does not match cost table");
    GateVector g = nr.gates;
    if (source == GateSource::kBinarized) {
      for (int d = 0; d < kNumDirections; ++d) {
        g[static_cast<std::size_t>(d)] = nr.open[static_cast<std::size_t>(d)] ? 1.0 : 0.0;
      }
    }
    total += node_cost(g, table.per_node[i]);
  }
  return total;
}

Var network_cost(std::span<const Var> node_gates, const CostTable& table) {
  if (node_gates.size() != table.per_node.size() || node_gates.empty()) {
    throw UsageError("network_cost: " + std::to_string(node_gates.size()) +
                     " gate tensors for " + std::to_string(table.per_node.size()) + " nodes");
  }
  Var total = node_cost(node_gates[0], table.per_node[0]);
  for (std::size_t i = 1; i < node_gates.size(); ++i) {
    total = ops::add(total, node_cost(node_gates[i], table.per_node[i]));
  }
  return total;
}

CostReport summarize_costs(std::span<const double> per_sample, const CostTable& table) {
  CostReport r;
  r.per_sample.assign(per_sample.begin(), per_sample.end());
  r.total = table.total;
  r.router_total = table.router_total;
  if (per_sample.empty()) return r;
  const double n = static_cast<double>(per_sample.size());
  r.mean = std::accumulate(per_sample.begin(), per_sample.end(), 0.0) / n;
  r.max = *std::max_element(per_sample.begin(), per_sample.end());
  r.min = *std::min_element(per_sample.begin(), per_sample.end());
  double var = 0.0;
  for (double v : per_sample) var += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(var / n);
  return r;
}

void write_cost_report_csv(std::ostream& os, const CostReport& report) {
  char buf[256];
  auto line = [&](const std::string& id, double c) {
    const double ratio = report.total > 0 ? c / report.total : 0.0;
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", c, report.total, ratio);
    os << id << buf;
  };
  os << "sample_id,C_net,C_tot,ratio\n";
  for (std::size_t i = 0; i < report.per_sample.size(); ++i) {
    line(std::to_string(i), report.per_sample[i]);
  }
  line("mean", report.mean);
  line("max", report.max);
  line("min", report.min);
  line("std", report.stddev);
}

}  // namespace dynroute
