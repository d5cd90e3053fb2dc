#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "lintomo/layers.hpp"
#include "lintomo/network.hpp"

namespace {

using namespace lintomo;

FeatureMap<float> random_map(int c, int b, int h, int w) {
  FeatureMap<float> f(c, b, h, w);
  std::mt19937_64 rng(7);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (float& v : f.v) v = d(rng);
  return f;
}

// Args: in channels, out channels, spatial size, batch.
void BM_ConvForward(benchmark::State& state) {
  const int ci = static_cast<int>(state.range(0)), co = static_cast<int>(state.range(1));
  const int s = static_cast<int>(state.range(2)), b = static_cast<int>(state.range(3));
  Conv2d<float> conv("c", ci, co, 3, 1, 1);
  conv.weight().allocate();
  conv.bias().allocate();
  const FeatureMap<float> x = random_map(ci, b, s, s);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, true));
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * co * ci * 9 * s * s * b,
                                                benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}
BENCHMARK(BM_ConvForward)->Args({40, 40, 16, 64})->Args({80, 80, 8, 64})->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  const int ci = static_cast<int>(state.range(0)), co = static_cast<int>(state.range(1));
  const int s = static_cast<int>(state.range(2)), b = static_cast<int>(state.range(3));
  Conv2d<float> conv("c", ci, co, 3, 1, 1);
  conv.weight().allocate();
  conv.bias().allocate();
  const FeatureMap<float> x = random_map(ci, b, s, s);
  const FeatureMap<float> g = random_map(co, b, s, s);
  conv.forward(x, true);
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(g));
  state.counters["GFLOPS"] = benchmark::Counter(4.0 * co * ci * 9 * s * s * b,
                                                benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}
BENCHMARK(BM_ConvBackward)->Args({40, 40, 16, 64})->Args({80, 80, 8, 64})->Unit(benchmark::kMillisecond);

// One optimizer-free training step (forward + backward) at desk scale.
void BM_DeskStep(benchmark::State& state) {
  ModelSpec spec;
  spec.use_pi = state.range(0) != 0;
  spec.n = 20;
  spec.numz = 16;
  spec.numr = 18;
  Model<float> model(spec);
  model.initialize(3);
  const int batch = 64;
  std::vector<float> x(static_cast<std::size_t>(batch) * spec.n, 0.3f);
  std::vector<float> pi(spec.use_pi ? static_cast<std::size_t>(spec.n) * 16 * 18 : 0, 0.5f);
  std::vector<float> g(static_cast<std::size_t>(batch) * spec.output_size(), 1e-3f);
  for (auto _ : state) {
    model.zero_grad();
    benchmark::DoNotOptimize(model.forward(x, batch, pi, true));
    model.backward(g);
  }
}
BENCHMARK(BM_DeskStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ParameterCountPaperScale(benchmark::State& state) {
  const ModelSpec spec = ModelSpec::reference_layout(Backbone::kRes, true, ActivationKind::kSoftplus, 92, 75, 50);
  for (auto _ : state) benchmark::DoNotOptimize(parameter_count(spec));
}
BENCHMARK(BM_ParameterCountPaperScale)->Unit(benchmark::kMillisecond);

}  // namespace
