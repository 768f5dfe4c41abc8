#include <benchmark/benchmark.h>

#include "snapflow/adam.hpp"
#include "snapflow/graph.hpp"
#include "snapflow/model.hpp"
#include "snapflow/rng.hpp"
#include "snapflow/runtime.hpp"
#include "snapflow/train.hpp"
#include "snapflow/warp.hpp"

namespace {

using namespace snapflow;

Tensor random_tensor(Rng& rng, const std::vector<int>& shape, float lo, float hi) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(1);
  ParamStore ps;
  ps.add("x", random_tensor(rng, {4, 32, 64, 64}, -1.0f, 1.0f));
  ps.add("w", random_tensor(rng, {64, 32, 3, 3}, -0.1f, 0.1f));
  ps.add("b", random_tensor(rng, {64}, -0.1f, 0.1f));
  for (auto _ : state) {
    Graph g;
    NodeId y = g.convolve(g.param(ps, "x"), g.param(ps, "w"), g.param(ps, "b"),
                          {1, 1}, {1, 1});
    benchmark::DoNotOptimize(g.value(y).data());
  }
}
BENCHMARK(BM_Conv2dForward)->Unit(benchmark::kMillisecond);

void BM_WarpBilinear(benchmark::State& state) {
  Rng rng(2);
  const Tensor src = random_tensor(rng, {3, 256, 256}, 0.0f, 1.0f);
  const Tensor flow = random_tensor(rng, {2, 256, 256}, -4.0f, 4.0f);
  for (auto _ : state) {
    Tensor out = bilinear_sample(src, flow);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_WarpBilinear)->Unit(benchmark::kMillisecond);

void BM_SampleSequence(benchmark::State& state) {
  ModelConfig mc;
  VideoModel model(mc);
  Rng rng(3);
  const Tensor reference =
      random_tensor(rng, {3, mc.image_size, mc.image_size}, 0.0f, 1.0f);
  const Tensor z = model.draw_prior(rng, 1);
  for (auto _ : state) {
    auto frames = model.sample_sequence(reference, z);
    benchmark::DoNotOptimize(frames.front().data());
  }
}
BENCHMARK(BM_SampleSequence)->Unit(benchmark::kMillisecond);

void BM_TrainingStep(benchmark::State& state) {
  ModelConfig mc;
  VideoModel model(mc);
  Rng rng(4);
  const int n = static_cast<int>(state.range(0));
  const Tensor clip = random_tensor(
      rng, {n, 3, mc.frames + 1, mc.image_size, mc.image_size}, 0.0f, 1.0f);
  Tensor epsilon({n, mc.z_dim()});
  for (int64_t i = 0; i < epsilon.numel(); ++i)
    epsilon[i] = static_cast<float>(rng.normal());
  const FeaturePyramid pyramid;
  const LossWeights weights;
  Adam optimizer(1e-3f);
  for (auto _ : state) {
    Graph g;
    auto pass = model.forward_training_pass(g, clip, epsilon);
    auto parts = build_objective(g, pass, pyramid, weights);
    NodeId total = total_objective(g, parts, weights);
    g.backward(total);
    optimizer.step(model.params(), g.param_grads());
  }
}
BENCHMARK(BM_TrainingStep)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  snapflow::pin_blas_threads();
  ::benchmark::Initialize(&argc, argv);
  if (::benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  ::benchmark::RunSpecifiedBenchmarks();
  ::benchmark::Shutdown();
  return 0;
}
