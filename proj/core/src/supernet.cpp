#include "dynroute/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "dynroute/errors.hpp"
#include "dynroute/madds_counter.hpp"
#include "dynroute/ops.hpp"

namespace dynroute {
namespace {

constexpr double kRouterBiasInit = 0.5;

void init_uniform(Parameter& p, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : p.value.data()) v = u(rng);
}

// Kaiming-style fan-in bound; relu layers get the sqrt(2) gain.
double fan_in_bound(int fan_in, bool relu) {
  return std::sqrt((relu ? 6.0 : 3.0) / static_cast<double>(fan_in));
}

std::string node_prefix(NodeId id) {
  return "node_l" + std::to_string(id.layer) + "_s" + std::to_string(id.scale);
}

void accumulate(std::optional<Var>& slot, Var v) {
  slot = slot ? ops::add(*slot, v) : v;
}

}  // namespace

SupernetSpec SupernetSpec::desk_default() {
  SupernetSpec s;
  s.num_layers = 8;
  s.num_scales = 4;
  s.channels_per_scale = {8, 16, 32, 64};
  s.image_channels = 1;
  s.head_channels = 32;
  return s;
}

void SupernetSpec::validate() const {
  if (num_layers < 1) throw ConfigError("supernet: num_layers must be >= 1");
  if (num_scales < 1) throw ConfigError("supernet: num_scales must be >= 1");
  if (static_cast<int>(channels_per_scale.size()) != num_scales) {
    throw ConfigError("supernet: channels_per_scale has " +
                      std::to_string(channels_per_scale.size()) + " entries for " +
                      std::to_string(num_scales) + " scales");
  }
  if (channels_per_scale.front() < 1) throw ConfigError("supernet: channels must be positive");
  for (std::size_t s = 1; s < channels_per_scale.size(); ++s) {
    if (channels_per_scale[s] != 2 * channels_per_scale[s - 1]) {
      throw ConfigError("supernet: channels must double between adjacent scales");
    }
  }
  if (image_channels < 1) throw ConfigError("supernet: image_channels must be >= 1");
  if (!(gate_threshold > 0)) throw ConfigError("supernet: gate_threshold must be > 0");
  if (head_channels < 1) throw ConfigError("supernet: head_channels must be >= 1");
}

int SupernetSpec::scales_at_layer(int layer) const {
  return std::min(layer, num_scales);
}

int SupernetSpec::node_count() const {
  int n = 0;
  for (int l = 1; l <= num_layers; ++l) n += scales_at_layer(l);
  return n;
}

GateMask valid_directions(const SupernetSpec& spec, int scale) {
  return {scale > 0, true, scale < spec.num_scales - 1};
}

GateMask binarize_gates(const GateVector& g, double tau) {
  return {g[0] >= tau, g[1] >= tau, g[2] >= tau};
}

Supernet::Supernet(SupernetSpec spec, ParameterSet& params, std::uint64_t seed)
    : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  const auto& ch = spec_.channels_per_scale;

  int in = spec_.image_channels;
  for (int i = 0; i < 3; ++i) {
    const std::string p = "stem" + std::to_string(i);
    stem_[i].dw = &params.add(p + ".dw", Shape{in, 3, 3});
    stem_[i].pw = &params.add(p + ".pw", Shape{ch[0], in});
    init_uniform(*stem_[i].dw, fan_in_bound(9, false), rng);
    init_uniform(*stem_[i].pw, fan_in_bound(in, true), rng);
    in = ch[0];
  }

  for (int l = 1; l <= spec_.num_layers; ++l) {
    for (int s = 0; s < spec_.scales_at_layer(l); ++s) {
      const NodeId id{l, s};
      const std::string p = node_prefix(id);
      const int c = ch[static_cast<std::size_t>(s)];
      NodeParams np;
      np.router_conv = &params.add(p + ".router.conv", Shape{c, c});
      np.router_fc_w = &params.add(p + ".router.fc_w", Shape{kNumDirections, c});
      np.router_fc_b = &params.add(p + ".router.fc_b", Shape{kNumDirections});
      np.dw = &params.add(p + ".block.dw", Shape{c, 3, 3});
      np.pw = &params.add(p + ".block.pw", Shape{c, c});
      init_uniform(*np.router_conv, fan_in_bound(c, true), rng);
      init_uniform(*np.router_fc_w, fan_in_bound(c, false), rng);
      np.router_fc_b->value.fill(kRouterBiasInit);
      init_uniform(*np.dw, fan_in_bound(9, false), rng);
      init_uniform(*np.pw, fan_in_bound(c, true), rng);
      np.norm_gamma = &params.add(p + ".block.gn_gamma", Shape{c});
      np.norm_beta = &params.add(p + ".block.gn_beta", Shape{c});
      np.norm_gamma->value.fill(1.0);
      if (s > 0) {
        np.up = &params.add(p + ".up", Shape{ch[static_cast<std::size_t>(s - 1)], c});
        init_uniform(*np.up, fan_in_bound(c, false), rng);
      }
      if (s < spec_.num_scales - 1) {
        np.down = &params.add(p + ".down", Shape{ch[static_cast<std::size_t>(s + 1)], c});
        init_uniform(*np.down, fan_in_bound(c, false), rng);
      }
      nodes_.push_back(id);
      node_params_.push_back(np);
    }
  }

  for (int s = 0; s < spec_.num_scales; ++s) {
    const int c = ch[static_cast<std::size_t>(s)];
    Parameter& proj = params.add("proj" + std::to_string(s), Shape{spec_.head_channels, c});
    init_uniform(proj, fan_in_bound(c, false), rng);
    projections_.push_back(&proj);
  }
  extra_level_.dw = &params.add("extra_level.dw", Shape{spec_.head_channels, 3, 3});
  extra_level_.pw = &params.add("extra_level.pw", Shape{spec_.head_channels, spec_.head_channels});
  init_uniform(*extra_level_.dw, fan_in_bound(9, false), rng);
  init_uniform(*extra_level_.pw, fan_in_bound(spec_.head_channels, false), rng);
}

int Supernet::node_index(NodeId id) const {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id);
  if (it == nodes_.end() || *it != id) {
    throw UsageError("node (" + std::to_string(id.layer) + ", " + std::to_string(id.scale) +
                     ") is not reachable");
  }
  return static_cast<int>(it - nodes_.begin());
}

Tensor Supernet::boundary_mask(int node, int batch) const {
  const GateMask valid = valid_directions(spec_, nodes_[static_cast<std::size_t>(node)].scale);
  Tensor m(Shape{batch, kNumDirections});
  for (int b = 0; b < batch; ++b) {
    for (int d = 0; d < kNumDirections; ++d) {
      m[static_cast<std::size_t>(b * kNumDirections + d)] = valid[static_cast<std::size_t>(d)] ? 1.0 : 0.0;
    }
  }
  return m;
}

Var Supernet::router_forward(Tape& tape, int node, Var x) const {
  madds::CategoryScope scope(madds::Category::kRouter);
  const NodeParams& np = node_params_[static_cast<std::size_t>(node)];
  Var h = ops::avg_pool_to(x, 2, 2);
  h = ops::conv2d_1x1(h, tape.param(*np.router_conv), 1);
  h = ops::global_avg_pool(h);
  Var logits = ops::fully_connected(h, tape.param(*np.router_fc_w), tape.param(*np.router_fc_b));
  Var gates = ops::clamp(ops::tanh(logits), 0.0, 1.0);
  return ops::mul_const(gates, boundary_mask(node, x.value().dim(0)));
}

Var Supernet::conv_block(Tape& tape, int node, Var x) const {
  madds::CategoryScope scope(madds::Category::kRoutable);
  const NodeParams& np = node_params_[static_cast<std::size_t>(node)];
  Var y = ops::depthwise_separable_conv3x3(x, tape.param(*np.dw), tape.param(*np.pw), 1);
  return ops::relu(ops::group_norm(y, tape.param(*np.norm_gamma), tape.param(*np.norm_beta)));
}

Var Supernet::transform(Tape& tape, int node, Direction d, Var y) const {
  madds::CategoryScope scope(madds::Category::kRoutable);
  const NodeParams& np = node_params_[static_cast<std::size_t>(node)];
  switch (d) {
    case kUp:
      return ops::bilinear_upsample_2x(ops::conv2d_1x1(y, tape.param(*np.up), 1));
    case kKeep:
      return y;
    case kDown:
      return ops::conv2d_1x1(y, tape.param(*np.down), 2);
  }
  throw UsageError("unknown direction");
}

Var Supernet::stem_forward(Tape& tape, Var images) const {
  madds::CategoryScope scope(madds::Category::kStem);
  Var x = images;
  for (const SepConvParams& sp : stem_) {
    x = ops::relu(ops::depthwise_separable_conv3x3(x, tape.param(*sp.dw), tape.param(*sp.pw), 2));
  }
  return x;
}

std::vector<Var> Supernet::project_pyramid(Tape& tape, std::span<const Var> scale_outputs) const {
  madds::CategoryScope scope(madds::Category::kHead);
  std::vector<Var> pyramid;
  for (std::size_t s = 0; s < scale_outputs.size(); ++s) {
    pyramid.push_back(ops::conv2d_1x1(scale_outputs[s], tape.param(*projections_[s]), 1));
  }
  pyramid.push_back(ops::depthwise_separable_conv3x3(
      pyramid.back(), tape.param(*extra_level_.dw), tape.param(*extra_level_.pw), 2));
  return pyramid;
}

SupernetOutput Supernet::forward(Tape& tape, const Tensor& images, Mode mode,
                                 const GateOverride& override_gates) const {
  if (images.rank() != 4 || images.dim(1) != spec_.image_channels) {
    throw UsageError("supernet: expected B x " + std::to_string(spec_.image_channels) +
                     " x H x W images, got " + shape_to_string(images.shape()));
  }
  const int mult = spec_.input_multiple();
  if (images.dim(2) % mult != 0 || images.dim(3) % mult != 0 || images.dim(2) == 0 ||
      images.dim(3) == 0) {
    throw UsageError("supernet: image size " + std::to_string(images.dim(2)) + "x" +
                     std::to_string(images.dim(3)) + " is not divisible by " +
                     std::to_string(mult));
  }
  if (override_gates.kind == GateOverride::Kind::kExplicit) {
    if (static_cast<int>(override_gates.per_sample.size()) != images.dim(0)) {
      throw UsageError("gate override covers " + std::to_string(override_gates.per_sample.size()) +
                       " samples, batch has " + std::to_string(images.dim(0)));
    }
    for (const auto& g : override_gates.per_sample) {
      if (g.size() != nodes_.size()) throw UsageError("gate override does not cover every node");
    }
  }
  return mode == Mode::kTrain ? forward_train(tape, images, override_gates)
                              : forward_infer(tape, images, override_gates);
}

SupernetOutput Supernet::forward_train(Tape& tape, const Tensor& images,
                                       const GateOverride& override_gates) const {
  const int batch = images.dim(0);
  const int height = images.dim(2), width = images.dim(3);
  const int num_scales = spec_.num_scales;
  auto zeros = [&](int s) {
    const int c = spec_.channels_per_scale[static_cast<std::size_t>(s)];
    return tape.constant(
        Tensor(Shape{batch, c, spec_.scale_size(height, s), spec_.scale_size(width, s)}));
  };

  SupernetOutput out;
  std::vector<std::optional<Var>> incoming(static_cast<std::size_t>(num_scales));
  incoming[0] = stem_forward(tape, tape.constant(images));

  std::size_t node = 0;
  for (int l = 1; l <= spec_.num_layers; ++l) {
    std::vector<std::optional<Var>> next(static_cast<std::size_t>(num_scales));
    for (int s = 0; s < spec_.scales_at_layer(l); ++s, ++node) {
      const int ni = static_cast<int>(node);
      Var x = incoming[static_cast<std::size_t>(s)] ? *incoming[static_cast<std::size_t>(s)] : zeros(s);
      Var gates;
      if (override_gates.kind == GateOverride::Kind::kNone) {
        gates = router_forward(tape, ni, x);
      } else {
        Tensor g = boundary_mask(ni, batch);
        if (override_gates.kind == GateOverride::Kind::kExplicit) {
          for (int b = 0; b < batch; ++b) {
            for (int d = 0; d < kNumDirections; ++d) {
              g[static_cast<std::size_t>(b * kNumDirections + d)] *=
                  override_gates.per_sample[static_cast<std::size_t>(b)][node][static_cast<std::size_t>(d)];
            }
          }
        }
        gates = tape.constant(std::move(g));
      }
      out.gates.push_back(gates);

      Var y = conv_block(tape, ni, x);
      const GateMask valid = valid_directions(spec_, s);
      for (int d = 0; d < kNumDirections; ++d) {
        if (!valid[static_cast<std::size_t>(d)]) continue;
        const int target = s + (d == kUp ? -1 : d == kDown ? 1 : 0);
        Var path = ops::scale_per_sample(transform(tape, ni, static_cast<Direction>(d), y),
                                         ops::column(gates, d));
        accumulate(next[static_cast<std::size_t>(target)], path);
      }
    }
    incoming = std::move(next);
  }

  std::vector<Var> scale_outputs;
  for (int s = 0; s < num_scales; ++s) {
    scale_outputs.push_back(incoming[static_cast<std::size_t>(s)] ? *incoming[static_cast<std::size_t>(s)]
                                                                  : zeros(s));
  }
  out.pyramid = project_pyramid(tape, scale_outputs);

  out.routes.resize(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    RouteRecord& rec = out.routes[static_cast<std::size_t>(b)];
    for (std::size_t n = 0; n < nodes_.size(); ++n) {
      const Tensor& g = out.gates[n].value();
      NodeRoute nr;
      nr.node = nodes_[n];
      for (int d = 0; d < kNumDirections; ++d) {
        nr.gates[static_cast<std::size_t>(d)] = g[static_cast<std::size_t>(b * kNumDirections + d)];
      }
      nr.open = binarize_gates(nr.gates, spec_.gate_threshold);
      nr.executed = true;
      rec.nodes.push_back(nr);
    }
  }
  return out;
}

SupernetOutput Supernet::forward_infer(Tape& tape, const Tensor& images,
                                       const GateOverride& override_gates) const {
  const int batch = images.dim(0);
  const int num_scales = spec_.num_scales;
  const int levels = num_scales + 1;
  std::vector<std::vector<Tensor>> level_samples(static_cast<std::size_t>(levels));
  std::vector<std::vector<Tensor>> gate_samples(nodes_.size());
  SupernetOutput out;

  for (int b = 0; b < batch; ++b) {
    Tape local(false);
    const Tensor image = images.batch_slice(b);
    const int height = image.dim(2), width = image.dim(3);
    auto zeros = [&](int s) {
      const int c = spec_.channels_per_scale[static_cast<std::size_t>(s)];
      return local.constant(
          Tensor(Shape{1, c, spec_.scale_size(height, s), spec_.scale_size(width, s)}));
    };

    RouteRecord rec;
    std::vector<std::optional<Var>> incoming(static_cast<std::size_t>(num_scales));
    incoming[0] = stem_forward(local, local.constant(image));
    std::size_t node = 0;
    for (int l = 1; l <= spec_.num_layers; ++l) {
      std::vector<std::optional<Var>> next(static_cast<std::size_t>(num_scales));
      for (int s = 0; s < spec_.scales_at_layer(l); ++s, ++node) {
        const int ni = static_cast<int>(node);
        Var x = incoming[static_cast<std::size_t>(s)] ? *incoming[static_cast<std::size_t>(s)] : zeros(s);
        const GateMask valid = valid_directions(spec_, s);
        GateVector g{};
        switch (override_gates.kind) {
          case GateOverride::Kind::kNone: {
            const Tensor& gv = router_forward(local, ni, x).value();
            for (int d = 0; d < kNumDirections; ++d) g[static_cast<std::size_t>(d)] = gv[static_cast<std::size_t>(d)];
            break;
          }
          case GateOverride::Kind::kAllOpen:
            g = {1.0, 1.0, 1.0};
            break;
          case GateOverride::Kind::kExplicit:
            g = override_gates.per_sample[static_cast<std::size_t>(b)][node];
            break;
        }
        for (int d = 0; d < kNumDirections; ++d) {
          if (!valid[static_cast<std::size_t>(d)]) g[static_cast<std::size_t>(d)] = 0.0;
        }
        NodeRoute nr;
        nr.node = nodes_[node];
        nr.gates = g;
        nr.open = binarize_gates(g, spec_.gate_threshold);
        nr.executed = !node_dropped(nr.open);
        rec.nodes.push_back(nr);
        gate_samples[node].push_back(Tensor(Shape{1, kNumDirections}, std::vector<double>(g.begin(), g.end())));

        if (!nr.executed) continue;
        Var y = conv_block(local, ni, x);
        for (int d = 0; d < kNumDirections; ++d) {
          if (!nr.open[static_cast<std::size_t>(d)]) continue;
          const int target = s + (d == kUp ? -1 : d == kDown ? 1 : 0);
          Var path = ops::scale(transform(local, ni, static_cast<Direction>(d), y),
                                g[static_cast<std::size_t>(d)]);
          accumulate(next[static_cast<std::size_t>(target)], path);
        }
      }
      incoming = std::move(next);
    }

    std::vector<Var> scale_outputs;
    for (int s = 0; s < num_scales; ++s) {
      scale_outputs.push_back(incoming[static_cast<std::size_t>(s)] ? *incoming[static_cast<std::size_t>(s)]
                                                                    : zeros(s));
    }
    const std::vector<Var> pyramid = project_pyramid(local, scale_outputs);
    for (int k = 0; k < levels; ++k) {
      level_samples[static_cast<std::size_t>(k)].push_back(pyramid[static_cast<std::size_t>(k)].value());
    }
    out.routes.push_back(std::move(rec));
  }

  for (auto& samples : level_samples) out.pyramid.push_back(tape.constant(concat_batch(samples)));
  for (auto& samples : gate_samples) out.gates.push_back(tape.constant(concat_batch(samples)));
  return out;
}

}  // namespace dynroute
