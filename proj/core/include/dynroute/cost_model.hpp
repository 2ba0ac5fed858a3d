#ifndef DYNROUTE_COST_MODEL_HPP_
#define DYNROUTE_COST_MODEL_HPP_

#include <iosfwd>
#include <span>
#include <vector>

#include "dynroute/supernet.hpp"

namespace dynroute {

// MAdds of one node's operations. Only multiply-accumulates are counted;
// biases and interpolation weights are free, so keep (identity) is 0.
struct NodeCost {
  double conv = 0;
  double up = 0;
  double keep = 0;
  double down = 0;
};

struct CostTable {
  int input_height = 0;
  int input_width = 0;
  std::vector<NodeId> nodes;
  std::vector<NodeCost> per_node;
  // Router MAdds per node; kept out of C_net.
  std::vector<double> router;
  // C_net with every valid gate open.
  double total = 0;
  double router_total = 0;
};

// 1x1 convolution MAdds: out_h * out_w * c_in * c_out.
double conv1x1_madds(int out_h, int out_w, int c_in, int c_out);
// Depthwise-separable 3x3: out_h * out_w * c_in * (9 + c_out).
double sepconv3x3_madds(int out_h, int out_w, int c_in, int c_out);

CostTable compile_cost_table(const SupernetSpec& spec, int input_height, int input_width);

// max(G) * c_conv + G . (c_up, c_keep, c_down)
double node_cost(const GateVector& g, const NodeCost& k);
// Batched form over a B x 3 gate matrix, returning a length-B vector. The max
// term routes its gradient to the first maximal gate.
Var node_cost(Var gates, const NodeCost& k);

enum class GateSource {
  kContinuous,  // the recorded gate values
  kBinarized,   // the open/closed mask as 0/1
};

// Sum of node costs over a route. UsageError when the route does not match
// the table's node list.
double network_cost(const RouteRecord& route, const CostTable& table,
                    GateSource source = GateSource::kBinarized);
// Differentiable per-sample C_net from per-node B x 3 gates.
Var network_cost(std::span<const Var> node_gates, const CostTable& table);

struct CostReport {
  std::vector<double> per_sample;
  double total = 0;          // C_tot
  double router_total = 0;   // reported alongside, never part of C_net
  double mean = 0;
  double max = 0;
  double min = 0;
  double stddev = 0;  // population standard deviation
};

CostReport summarize_costs(std::span<const double> per_sample, const CostTable& table);

// CSV: sample_id,C_net,C_tot,ratio then aggregate rows mean/max/min/std.
void write_cost_report_csv(std::ostream& os, const CostReport& report);

}  // namespace dynroute

#endif  // DYNROUTE_COST_MODEL_HPP_
