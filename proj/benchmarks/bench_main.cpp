#include <benchmark/benchmark.h>

#include "cfn/fusion.hpp"
#include "cfn/layers.hpp"
#include "cfn/train.hpp"

using namespace cfn;

namespace {

// Args: channels in/out, spatial size.
void bm_conv3x3_forward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  const auto x = TensorF::uniform({8, c, hw, hw}, 1, -1.0, 1.0);
  const auto k = TensorF::uniform({c, c, 3, 3}, 2, -0.1, 0.1);
  const TensorF b({c});
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_fb(x, k, b, 1, 1).output);
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(bm_conv3x3_forward)->Args({16, 16})->Args({32, 16})->Args({96, 8});

void bm_conv3x3_backward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  const auto x = TensorF::uniform({8, c, hw, hw}, 1, -1.0, 1.0);
  const auto k = TensorF::uniform({c, c, 3, 3}, 2, -0.1, 0.1);
  const TensorF b({c});
  const auto layer = conv2d_fb(x, k, b, 1, 1);
  const auto up = TensorF::uniform(layer.output.shape(), 3, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(layer.backward(up));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(bm_conv3x3_backward)->Args({16, 16})->Args({32, 16});

void bm_fuse_lc(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const BranchStack<float> g(TensorF::uniform({100, k, 3}, 1, 0.0, 1.0));
  const auto p = init_lc<float>(k, 3);
  for (auto _ : state) {
    auto out = fuse_lc(g, p.weight, p.bias);
    benchmark::DoNotOptimize(out.backward(out.output));
  }
}
BENCHMARK(bm_fuse_lc)->Arg(16)->Arg(192);

// One SGD step of the default desk-scale CFN on a batch of 100 16x16 images.
void bm_train_step(benchmark::State& state) {
  ArchitectureConfig c;
  c.widths = {8, 8, 16, 16};
  c.channels = 16;
  c.classes = 3;
  c.branch_points = {"pool1"};
  const auto graph = build_generic_cfn(c);
  const auto data = make_synthetic(3, 100, 16, 1);
  auto params = init_params<float>(graph, 1);
  TensorMap<float> velocity;
  const TrainConfig cfg;
  for (auto _ : state) {
    const auto fwd = forward(graph, params, data.images, data.labels);
    const auto grads = backward(fwd.tape);
    sgd_step(params, grads.params, velocity, cfg, 0.01);
  }
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
