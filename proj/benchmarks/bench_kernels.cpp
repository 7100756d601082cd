// Microbenchmarks for the kernels that dominate training time.
#include <benchmark/benchmark.h>

#include "mgev/cost_volume.hpp"
#include "mgev/model.hpp"
#include "mgev/random.hpp"
#include "mgev/update.hpp"

using namespace mgev;

namespace {

Tensor randn(Rng& rng, Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.normal(0.0, 1.0));
  return t;
}

void BM_Conv2d3x3(benchmark::State& state) {
  int64_t ch = state.range(0);
  Rng rng(1);
  Tensor x = randn(rng, {ch, 16, 32});
  Tensor w = randn(rng, {ch, ch, 3, 3});
  Tensor b = Tensor::zeros(Shape{ch});
  for (auto _ : state) {
    Tensor y = conv2d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * ch * ch * 9 * 16 * 32);
}
BENCHMARK(BM_Conv2d3x3)->Arg(32)->Arg(64)->Arg(128);

void BM_Conv2dBackward(benchmark::State& state) {
  int64_t ch = state.range(0);
  Rng rng(2);
  Tensor x = randn(rng, {ch, 16, 32});
  Tensor w = randn(rng, {ch, ch, 3, 3});
  Tensor b = Tensor::zeros(Shape{ch});
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    Tensor y = conv2d(x, w, b, 1, 1);
    Tensor l = sum(y);
    GradMap<float> gm;
    tape.backward(l, gm);
    benchmark::DoNotOptimize(gm.size());
  }
  state.SetItemsProcessed(state.iterations() * 3 * 2 * ch * ch * 9 * 16 * 32);
}
BENCHMARK(BM_Conv2dBackward)->Arg(32)->Arg(64);

void BM_Conv3dUNetBlock(benchmark::State& state) {
  Rng rng(3);
  Tensor x = randn(rng, {8, 8, 16, 32});
  Tensor w = randn(rng, {16, 8, 3, 3, 3});
  Tensor b = Tensor::zeros(Shape{16});
  for (auto _ : state) {
    Tensor y = conv3d(x, w, b, 2, 1);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Conv3dUNetBlock);

void BM_GroupCorrelation(benchmark::State& state) {
  Rng rng(4);
  Tensor fl = randn(rng, {32, 16, 32});
  Tensor fr = randn(rng, {32, 16, 32});
  for (auto _ : state) {
    Tensor c = group_correlation(fl, fr, 8, 8);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_GroupCorrelation);

void BM_AllPairs(benchmark::State& state) {
  Rng rng(5);
  Tensor fl = randn(rng, {32, 16, 32});
  Tensor fr = randn(rng, {32, 16, 32});
  for (auto _ : state) {
    auto pyr = all_pairs_correlation(fl, fr);
    benchmark::DoNotOptimize(pyr[0].data());
  }
}
BENCHMARK(BM_AllPairs);

void BM_GruStep(benchmark::State& state) {
  int hidden = static_cast<int>(state.range(0));
  Rng rng(6);
  GruCell<float> cell(rng, hidden, 37);
  ContextLevel<float> ctx;
  ctx.cz = randn(rng, {hidden, 16, 32});
  ctx.cr = randn(rng, {hidden, 16, 32});
  ctx.ch = randn(rng, {hidden, 16, 32});
  Tensor h = randn(rng, {hidden, 16, 32});
  Tensor x = randn(rng, {37, 16, 32});
  for (auto _ : state) {
    Tensor h2 = cell(h, x, ctx);
    benchmark::DoNotOptimize(h2.data());
  }
}
BENCHMARK(BM_GruStep)->Arg(32)->Arg(96)->Arg(128);

void BM_TrainStepForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.variant = "rt";
  cfg.d_s = 32;
  cfg.features.enc = {8, 12, 16, 24, 32};
  cfg.features.out2 = 8;
  cfg.features.out4 = 32;
  cfg.features.out8 = 16;
  cfg.features.out16 = 24;
  cfg.features.out32 = 32;
  cfg.context_trunk = 24;
  cfg.hidden = 32;
  cfg.gru_levels = 1;
  cfg.iters_train = 4;
  cfg.enc_g = 24;
  cfg.enc_d = 12;
  cfg.ups_mid = 12;
  cfg.ups_half = 16;
  cfg.crop_h = 64;
  cfg.crop_w = 128;
  Model<float> model(cfg);
  Rng rng(7);
  Tensor left = randn(rng, {3, 64, 128});
  Tensor right = randn(rng, {3, 64, 128});
  for (auto _ : state) {
    auto fwd = model.forward(left, right, 4, true);
    benchmark::DoNotOptimize(fwd.field.final_full.data());
  }
}
BENCHMARK(BM_TrainStepForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
