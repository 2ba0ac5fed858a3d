#ifndef DYNROUTE_SUPERNET_HPP_
#define DYNROUTE_SUPERNET_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dynroute/tape.hpp"

namespace dynroute {

// Candidate output paths of a computation node, in gate order.
enum Direction : int { kUp = 0, kKeep = 1, kDown = 2 };
inline constexpr int kNumDirections = 3;

using GateVector = std::array<double, kNumDirections>;
using GateMask = std::array<bool, kNumDirections>;

struct SupernetSpec {
  int num_layers = 16;
  int num_scales = 4;
  // Channels per scale, finest first; doubles between adjacent scales.
  std::vector<int> channels_per_scale = {64, 128, 256, 512};
  int image_channels = 3;
  double gate_threshold = 1e-4;
  int head_channels = 256;

  static SupernetSpec desk_default();

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  // Layer l (1-based) exposes scales 0 .. scales_at_layer(l) - 1; the stem
  // feeds scale 0 only and each layer can reach one coarser scale.
  int scales_at_layer(int layer) const;
  int node_count() const;
  // Inputs must be divisible by this (stem /8 then one halving per scale).
  int input_multiple() const { return 8 << (num_scales - 1); }
  // Spatial size of scale s for an input of size n.
  int scale_size(int input_size, int scale) const { return input_size / (8 << scale); }

  friend bool operator==(const SupernetSpec&, const SupernetSpec&) = default;
};

struct NodeId {
  int layer = 1;  // 1-based
  int scale = 0;  // 0 = 1/8 resolution

  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

// Directions that exist at a scale: no up-path at scale 0, no down-path at the
// coarsest scale.
GateMask valid_directions(const SupernetSpec& spec, int scale);

// Inference-time gate binarization: a path stays open iff g >= tau.
GateMask binarize_gates(const GateVector& g, double tau);
inline bool node_dropped(const GateMask& m) { return !m[0] && !m[1] && !m[2]; }

struct NodeRoute {
  NodeId node;
  GateVector gates{};
  GateMask open{};
  // False when every path was closed and the convolution block was skipped.
  bool executed = true;
};

// One sample's route: an entry for every reachable node, in node order.
struct RouteRecord {
  std::vector<NodeRoute> nodes;
};

enum class Mode { kTrain, kInfer };

// Replaces router outputs. kAllOpen sets every valid gate to 1 (the
// router-free dense trellis); kExplicit supplies values per sample and node.
// Boundary-invalid directions are zeroed in every case.
struct GateOverride {
  enum class Kind { kNone, kAllOpen, kExplicit };
  Kind kind = Kind::kNone;
  std::vector<std::vector<GateVector>> per_sample;  // [sample][node]

  static GateOverride all_open() { return {Kind::kAllOpen, {}}; }
  static GateOverride explicit_gates(std::vector<std::vector<GateVector>> g) {
    return {Kind::kExplicit, std::move(g)};
  }
};

struct SupernetOutput {
  // Projected pyramid, finest first: C3..C(3+num_scales), each
  // B x head_channels x H x W. Untracked constants in infer mode.
  std::vector<Var> pyramid;
  // Per node, B x 3 gates after boundary masking.
  std::vector<Var> gates;
  std::vector<RouteRecord> routes;
};

class Supernet {
 public:
  // Registers all parameters in `params` and initializes them from `seed`.
  Supernet(SupernetSpec spec, ParameterSet& params, std::uint64_t seed);

  const SupernetSpec& spec() const { return spec_; }
  const std::vector<NodeId>& nodes() const { return nodes_; }
  int node_index(NodeId id) const;

  // Images: B x image_channels x H x W with H, W divisible by
  // spec().input_multiple(); UsageError otherwise.
  SupernetOutput forward(Tape& tape, const Tensor& images, Mode mode,
                         const GateOverride& override_gates = {}) const;

  // Gates for a node input x (B x C x H x W): B x 3 in [0, 1] with
  // boundary-invalid entries forced to 0.
  Var router_forward(Tape& tape, int node, Var x) const;

  // Relu(GroupNorm(SepConv3x3(x))) for a node.
  Var conv_block(Tape& tape, int node, Var x) const;
  // Resolution change applied to a conv block output.
  Var transform(Tape& tape, int node, Direction d, Var y) const;
  Var stem_forward(Tape& tape, Var images) const;
  // Projects per-scale outputs to head channels and appends the extra
  // stride-2 level.
  std::vector<Var> project_pyramid(Tape& tape, std::span<const Var> scale_outputs) const;

 private:
  struct NodeParams {
    Parameter* router_conv = nullptr;  // hidden x C
    Parameter* router_fc_w = nullptr;  // 3 x hidden
    Parameter* router_fc_b = nullptr;  // 3
    Parameter* dw = nullptr;           // C x 3 x 3
    Parameter* pw = nullptr;           // C x C
    Parameter* norm_gamma = nullptr;   // C
    Parameter* norm_beta = nullptr;    // C
    Parameter* up = nullptr;           // C(s-1) x C, null at scale 0
    Parameter* down = nullptr;         // C(s+1) x C, null at coarsest scale
  };
  struct SepConvParams {
    Parameter* dw = nullptr;
    Parameter* pw = nullptr;
  };

  SupernetOutput forward_train(Tape& tape, const Tensor& images,
                               const GateOverride& override_gates) const;
  SupernetOutput forward_infer(Tape& tape, const Tensor& images,
                               const GateOverride& override_gates) const;
  Tensor boundary_mask(int node, int batch) const;

  SupernetSpec spec_;
  std::vector<NodeId> nodes_;
  std::vector<NodeParams> node_params_;
  std::array<SepConvParams, 3> stem_{};
  std::vector<Parameter*> projections_;
  SepConvParams extra_level_{};
};

}  // namespace dynroute

#endif  // DYNROUTE_SUPERNET_HPP_
