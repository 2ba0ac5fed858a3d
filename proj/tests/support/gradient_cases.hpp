#ifndef DYNROUTE_TESTS_GRADIENT_CASES_HPP_
#define DYNROUTE_TESTS_GRADIENT_CASES_HPP_

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dynroute/cost_model.hpp"
#include "dynroute/detection_head.hpp"
#include "dynroute/grad_check.hpp"
#include "dynroute/ops.hpp"
#include "dynroute/scale_budget.hpp"
#include "dynroute/similarity.hpp"

// Gradient-check cases shared by the unit tests and the acceptance run.
namespace dynroute::testing {

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  GradCheckFn fn;
};

inline Tensor random_binary(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t(shape);
  for (auto& v : t.data()) v = (rng() & 3) == 0 ? 1.0 : 0.0;
  return t;
}

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  auto unary = [&](std::string n, Shape s, std::function<Var(Var)> f) {
    c.push_back({std::move(n), {std::move(s)}, [f](Tape&, std::span<const Var> v) { return f(v[0]); }});
  };
  auto binary = [&](std::string n, std::vector<Shape> s, std::function<Var(Var, Var)> f) {
    c.push_back({std::move(n), std::move(s),
                 [f](Tape&, std::span<const Var> v) { return f(v[0], v[1]); }});
  };

  binary("add", {{2, 3}, {2, 3}}, ops::add);
  binary("sub", {{2, 3}, {2, 3}}, ops::sub);
  binary("mul", {{2, 3}, {2, 3}}, ops::mul);
  unary("scale", {5}, [](Var x) { return ops::scale(x, -1.7); });
  unary("add_scalar", {5}, [](Var x) { return ops::add_scalar(x, 0.3); });
  unary("square", {2, 4}, ops::square);
  unary("mul_const", {2, 3}, [](Var x) {
    Tensor k({2, 3}, {0.5, -1.0, 2.0, 3.0, 0.0, -0.25});
    return ops::mul_const(x, k);
  });
  unary("tanh", {6}, ops::tanh);
  unary("relu", {6}, ops::relu);
  unary("exp", {6}, ops::exp);
  unary("clamp", {8}, [](Var x) { return ops::clamp(x, -0.4, 0.5); });
  unary("sum", {3, 2}, ops::sum);
  unary("mean", {3, 2}, ops::mean);
  unary("max_over_vector", {7}, ops::max_over_vector);
  unary("rowwise_max", {4, 3}, ops::rowwise_max);
  binary("cosine_similarity", {{9}, {9}}, ops::cosine_similarity);
  binary("conv2d_1x1_s1", {{2, 3, 4, 4}, {5, 3}},
         [](Var x, Var w) { return ops::conv2d_1x1(x, w, 1); });
  binary("conv2d_1x1_s2", {{1, 3, 5, 5}, {2, 3}},
         [](Var x, Var w) { return ops::conv2d_1x1(x, w, 2); });
  binary("depthwise_conv3x3_s1", {{1, 2, 5, 4}, {2, 3, 3}},
         [](Var x, Var w) { return ops::depthwise_conv3x3(x, w, 1); });
  binary("depthwise_conv3x3_s2", {{2, 2, 6, 6}, {2, 3, 3}},
         [](Var x, Var w) { return ops::depthwise_conv3x3(x, w, 2); });
  c.push_back({"depthwise_separable_conv3x3", {{1, 4, 8, 8}, {4, 3, 3}, {3, 4}},
               [](Tape&, std::span<const Var> v) {
                 return ops::depthwise_separable_conv3x3(v[0], v[1], v[2], 1);
               }});
  c.push_back({"depthwise_separable_conv3x3_s2", {{2, 3, 6, 6}, {3, 3, 3}, {4, 3}},
               [](Tape&, std::span<const Var> v) {
                 return ops::depthwise_separable_conv3x3(v[0], v[1], v[2], 2);
               }});
  binary("add_channel_bias", {{2, 3, 2, 2}, {3}}, ops::add_channel_bias);
  c.push_back({"group_norm", {{2, 3, 3, 2}, {3}, {3}},
               [](Tape&, std::span<const Var> v) { return ops::group_norm(v[0], v[1], v[2]); }});
  unary("avg_pool_to", {2, 2, 5, 7}, [](Var x) { return ops::avg_pool_to(x, 2, 3); });
  unary("global_avg_pool", {2, 3, 3, 3}, ops::global_avg_pool);
  c.push_back({"fully_connected", {{3, 4}, {2, 4}, {2}},
               [](Tape&, std::span<const Var> v) {
                 return ops::fully_connected(v[0], v[1], v[2]);
               }});
  unary("bilinear_upsample_2x", {1, 2, 3, 4}, ops::bilinear_upsample_2x);
  binary("scale_per_sample", {{3, 2, 2, 2}, {3}}, ops::scale_per_sample);
  unary("column", {4, 3}, [](Var m) { return ops::column(m, 1); });
  unary("row", {4, 3}, [](Var m) { return ops::row(m, 2); });
  binary("concat_columns", {{3, 2}, {3, 4}}, [](Var a, Var b) {
    std::vector<Var> parts{a, b};
    return ops::concat_columns(parts);
  });
  unary("matvec_const", {3, 4}, [](Var m) {
    const std::vector<double> k{1.0, -2.0, 0.5, 3.0};
    return ops::matvec_const(m, k);
  });
  unary("sigmoid_focal_loss_sum", {2, 3, 2, 2}, [](Var x) {
    return ops::sigmoid_focal_loss_sum(x, random_binary({2, 3, 2, 2}, 5), 0.25, 2.0);
  });
  unary("iou_loss_sum", {2, 4, 3, 3}, [](Var x) {
    Tensor target({2, 4, 3, 3});
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = 0.5 + 0.1 * static_cast<double>(i % 7);
    Tensor mask({2, 3, 3});
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = i % 3 == 0 ? 1.0 : 0.0;
    return ops::iou_loss_sum(ops::exp(x), target, mask);
  });
  return c;
}

// The training loss terms, each on small inputs.
inline std::vector<OpCase> loss_cases() {
  std::vector<OpCase> c;

  PyramidGeometry g;
  PyramidGeometry::Level lv;
  lv.stride = 8;
  lv.height = 4;
  lv.width = 4;
  lv.min_size = 0;
  lv.max_size = 1e9;
  g.levels.push_back(lv);
  const std::vector<std::vector<Box>> boxes{{Box{3, 4, 17, 12, 0}, Box{18, 16, 12, 14, 1}}};
  const DetectionTargets targets = assign_targets(boxes, g, 2);
  c.push_back({"L_det", {{1, 2, 4, 4}, {1, 4, 4, 4}}, [targets](Tape&, std::span<const Var> v) {
                 DensePrediction pred;
                 pred.levels.push_back({v[0], ops::exp(v[1])});
                 return detection_loss(pred, targets, HeadConfig{}).total;
               }});

  const std::vector<double> budgets{0.1, 0.2, -0.3, 0.05, 0.9};
  c.push_back({"L_global", {{5}}, [budgets](Tape&, std::span<const Var> v) {
                 return global_budget_loss(v[0], budgets);
               }});

  const std::vector<ScaleEncoding> enc{{1, 0, 0, 0}, {1, 1, 0, 0}, {0, 1, 1, 1}, {1, 0, 0, 0}};
  c.push_back({"L_local", {{4, 9}}, [enc](Tape&, std::span<const Var> v) {
                 return local_similarity_loss(v[0], enc, SimilarityConfig{});
               }});

  SupernetSpec spec;
  spec.num_layers = 4;
  spec.num_scales = 3;
  spec.channels_per_scale = {4, 8, 16};
  spec.image_channels = 1;
  spec.head_channels = 8;
  const CostTable table = compile_cost_table(spec, 32, 32);
  // Normalized units keep the check well conditioned.
  c.push_back({"C_net", std::vector<Shape>(table.nodes.size(), Shape{3, 3}),
               [table](Tape&, std::span<const Var> v) {
                 return ops::scale(network_cost(v, table), 1.0 / table.total);
               }});
  return c;
}

}  // namespace dynroute::testing

#endif  // DYNROUTE_TESTS_GRADIENT_CASES_HPP_
