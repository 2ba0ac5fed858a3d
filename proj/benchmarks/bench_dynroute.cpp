#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "dynroute/cost_model.hpp"
#include "dynroute/data_synth.hpp"
#include "dynroute/ops.hpp"
#include "dynroute/similarity.hpp"
#include "dynroute/supernet.hpp"

using namespace dynroute;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

void BM_SepConv(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Tensor x = random_tensor({8, c, 8, 8}, 1);
  const Tensor dw = random_tensor({c, 3, 3}, 2);
  const Tensor pw = random_tensor({c, c}, 3);
  for (auto _ : state) {
    Tape tape(false);
    Var y = ops::depthwise_separable_conv3x3(tape.constant(x), tape.constant(dw), tape.constant(pw), 1);
    benchmark::DoNotOptimize(y.value().data().data());
  }
}
BENCHMARK(BM_SepConv)->Arg(8)->Arg(32);

void BM_SepConvBackward(benchmark::State& state) {
  const Tensor x = random_tensor({8, 16, 8, 8}, 1);
  const Tensor dw = random_tensor({16, 3, 3}, 2);
  const Tensor pw = random_tensor({16, 16}, 3);
  for (auto _ : state) {
    Tape tape;
    Var y = ops::depthwise_separable_conv3x3(tape.leaf(x), tape.leaf(dw), tape.leaf(pw), 1);
    tape.backward(ops::sum(y));
  }
}
BENCHMARK(BM_SepConvBackward);

void BM_SupernetForward(benchmark::State& state) {
  const Mode mode = state.range(0) ? Mode::kTrain : Mode::kInfer;
  ParameterSet params;
  Supernet net(SupernetSpec::desk_default(), params, 1);
  const Tensor images = random_tensor({8, 1, 64, 64}, 4);
  for (auto _ : state) {
    Tape tape(mode == Mode::kTrain);
    auto out = net.forward(tape, images, mode);
    benchmark::DoNotOptimize(out.pyramid.front().value().data().data());
  }
}
BENCHMARK(BM_SupernetForward)->Arg(0)->Arg(1)->ArgName("train");

void BM_NetworkCost(benchmark::State& state) {
  const SupernetSpec spec = SupernetSpec::desk_default();
  const CostTable table = compile_cost_table(spec, 64, 64);
  std::mt19937_64 rng(5);
  RouteRecord route;
  for (const NodeId& id : table.nodes) {
    NodeRoute nr;
    nr.node = id;
    for (auto& g : nr.gates) g = (rng() & 1) ? 0.7 : 0.0;
    nr.open = binarize_gates(nr.gates, spec.gate_threshold);
    route.nodes.push_back(nr);
  }
  for (auto _ : state) benchmark::DoNotOptimize(network_cost(route, table));
}
BENCHMARK(BM_NetworkCost);

void BM_LocalSimilarityLoss(benchmark::State& state) {
  const int b = static_cast<int>(state.range(0));
  const Tensor routes = random_tensor({b, 78}, 6);
  std::vector<ScaleEncoding> enc(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) enc[static_cast<std::size_t>(i)] = {static_cast<std::uint8_t>(i & 1), 1, 0, static_cast<std::uint8_t>((i >> 1) & 1)};
  for (auto _ : state) {
    Tape tape;
    Var l = local_similarity_loss(tape.leaf(routes), enc, SimilarityConfig{});
    tape.backward(l);
  }
}
BENCHMARK(BM_LocalSimilarityLoss)->Arg(8)->Arg(32);

void BM_GenerateCorpus(benchmark::State& state) {
  SynthConfig cfg;
  cfg.num_images = 64;
  for (auto _ : state) benchmark::DoNotOptimize(generate_corpus(cfg).images.size());
}
BENCHMARK(BM_GenerateCorpus);

}  // namespace

BENCHMARK_MAIN();
