#include "dynroute/route_export.hpp"

#include <cstdio>
#include <ostream>

namespace dynroute {

namespace {

std::string node_name(int layer, int scale) {
  return "n_l" + std::to_string(layer) + "_s" + std::to_string(scale);
}

std::string output_name(int scale) { return "out_s" + std::to_string(scale); }

std::string fmt(const char* f, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const char* direction_name(Direction d) {
  switch (d) {
    case kUp:
      return "up";
    case kKeep:
      return "keep";
    case kDown:
      return "down";
  }
  return "?";
}

}  // namespace

RouteGraph build_route_graph(const SupernetSpec& spec, const RouteRecord& route) {
  RouteGraph g;
  g.nodes.push_back({"stem", 0, 0, false});
  for (const NodeRoute& nr : route.nodes) {
    g.nodes.push_back({node_name(nr.node.layer, nr.node.scale), nr.node.layer, nr.node.scale, !nr.executed});
  }
  for (int s = 0; s < spec.scales_at_layer(spec.num_layers); ++s) {
    g.nodes.push_back({output_name(s), spec.num_layers + 1, s, false});
  }

  g.edges.push_back({"stem", node_name(1, 0), kKeep, 1.0});
  for (const NodeRoute& nr : route.nodes) {
    if (!nr.executed) continue;
    for (int d = 0; d < kNumDirections; ++d) {
      if (!nr.open[static_cast<std::size_t>(d)]) continue;
      const int target = nr.node.scale + (d == kUp ? -1 : d == kDown ? 1 : 0);
      const std::string to =
          nr.node.layer == spec.num_layers ? output_name(target) : node_name(nr.node.layer + 1, target);
      g.edges.push_back({node_name(nr.node.layer, nr.node.scale), to, static_cast<Direction>(d),
                         nr.gates[static_cast<std::size_t>(d)]});
    }
  }
  return g;
}

void write_dot(std::ostream& os, const RouteGraph& graph) {
  os << "digraph route {\n";
  os << "  rankdir=LR;\n";
  os << "  node [shape=circle, fontsize=10];\n";
  for (const auto& n : graph.nodes) {
    os << "  " << n.id << " [label=\"";
    if (n.id == "stem") {
      os << "stem\", shape=box";
    } else if (n.id.rfind("out_", 0) == 0) {
      os << "C" << (n.scale + 3) << "\", shape=box";
    } else {
      os << n.layer << "," << n.scale << "\"";
      if (n.dropped) os << ", style=filled, fillcolor=gray80, fontcolor=gray50, color=gray60";
    }
    os << "];\n";
  }
  for (const auto& e : graph.edges) {
    os << "  " << e.from << " -> " << e.to << " [style=solid, label=\"" << fmt("%.3f", e.gate)
       << "\", tooltip=\"" << direction_name(e.direction) << "\"];\n";
  }
  os << "}\n";
}

void write_svg(std::ostream& os, const RouteGraph& graph, const SupernetSpec& spec) {
  constexpr int kStep = 70;
  constexpr int kMargin = 40;
  constexpr int kRadius = 14;
  const int width = 2 * kMargin + (spec.num_layers + 1) * kStep;
  const int height = 2 * kMargin + (spec.num_scales - 1) * kStep;
  auto px = [&](int layer) { return kMargin + layer * kStep; };
  auto py = [&](int scale) { return kMargin + scale * kStep; };
  auto find = [&](const std::string& id) -> const RouteGraph::Node* {
    for (const auto& n : graph.nodes) {
      if (n.id == id) return &n;
    }
    return nullptr;
  };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& e : graph.edges) {
    const auto* a = find(e.from);
    const auto* b = find(e.to);
    if (a == nullptr || b == nullptr) continue;
    const int x1 = px(a->layer), y1 = py(a->scale), x2 = px(b->layer), y2 = py(b->scale);
    os << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
       << "\" stroke=\"black\" stroke-width=\"" << fmt("%.2f", 0.5 + 2.5 * e.gate) << "\"/>\n";
    os << "<text x=\"" << (x1 + x2) / 2 << "\" y=\"" << (y1 + y2) / 2 - 3
       << "\" font-size=\"8\" text-anchor=\"middle\" fill=\"#335\">" << fmt("%.2f", e.gate) << "</text>\n";
  }
  for (const auto& n : graph.nodes) {
    const bool terminal = n.layer == 0 || n.layer == spec.num_layers + 1;
    const char* fill = n.dropped ? "#ccc" : terminal ? "#def" : "white";
    const char* stroke = n.dropped ? "#999" : "black";
    os << "<circle cx=\"" << px(n.layer) << "\" cy=\"" << py(n.scale) << "\" r=\"" << kRadius
       << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
    std::string label = n.layer == 0 ? "stem"
                        : terminal   ? "C" + std::to_string(n.scale + 3)
                                     : std::to_string(n.layer) + "," + std::to_string(n.scale);
    os << "<text x=\"" << px(n.layer) << "\" y=\"" << py(n.scale) + 3
       << "\" font-size=\"8\" text-anchor=\"middle\" fill=\"" << (n.dropped ? "#888" : "black") << "\">"
       << label << "</text>\n";
  }
  os << "</svg>\n";
}

void write_route_record(std::ostream& os, long long sample_id, const RouteRecord& route) {
  os << "sample " << sample_id << "\n";
  for (const NodeRoute& nr : route.nodes) {
    os << nr.node.layer << " " << nr.node.scale;
    for (double g : nr.gates) os << " " << fmt("%.17g", g);
    os << " ";
    for (bool o : nr.open) os << (o ? '1' : '0');
    os << "\n";
  }
}

}  // namespace dynroute
