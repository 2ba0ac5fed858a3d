#ifndef DYNROUTE_ROUTE_EXPORT_HPP_
#define DYNROUTE_ROUTE_EXPORT_HPP_

#include <iosfwd>
#include <string>
#include <vector>

#include "dynroute/supernet.hpp"

namespace dynroute {

// Display model of one sample's route. Layer 0 holds the stem and layer
// num_layers + 1 the per-scale outputs.
struct RouteGraph {
  struct Node {
    std::string id;
    int layer = 0;
    int scale = 0;
    bool dropped = false;
  };
  struct Edge {
    std::string from;
    std::string to;
    Direction direction = kKeep;
    double gate = 1.0;
  };
  std::vector<Node> nodes;
  std::vector<Edge> edges;  // open paths only
};

RouteGraph build_route_graph(const SupernetSpec& spec, const RouteRecord& route);

void write_dot(std::ostream& os, const RouteGraph& graph);
// Fixed grid: x follows the layer, y the scale.
void write_svg(std::ostream& os, const RouteGraph& graph, const SupernetSpec& spec);

// "sample <id>" followed by one "layer scale g_up g_keep g_down mask" line per
// node, mask being three 0/1 characters in gate order.
void write_route_record(std::ostream& os, long long sample_id, const RouteRecord& route);

}  // namespace dynroute

#endif  // DYNROUTE_ROUTE_EXPORT_HPP_
