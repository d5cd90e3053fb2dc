#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "lintomo/geometry.hpp"

namespace {

using namespace lintomo;

void BM_TraceChord(benchmark::State& state) {
  const int cells = static_cast<int>(state.range(0));
  const Grid grid = build_grid(1.0, 2.0, -0.5, 0.5, cells, cells);
  const Chord chord{{0.8, -0.6}, {2.2, 0.7}, 0.0};
  for (auto _ : state) benchmark::DoNotOptimize(trace_chord(grid, chord));
}
BENCHMARK(BM_TraceChord)->Arg(32)->Arg(75)->Arg(200);

void BM_TraceChordBeam(benchmark::State& state) {
  const Grid grid = build_grid(1.0, 2.0, -0.5, 0.5, 36, 32);
  const Chord chord{{0.8, -0.6}, {2.2, 0.7}, 0.02};
  const int subrays = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(trace_chord(grid, chord, subrays));
}
BENCHMARK(BM_TraceChordBeam)->Arg(1)->Arg(5)->Arg(15);

void BM_BuildCMatrix(benchmark::State& state) {
  const Grid grid = build_grid(1.0, 2.0, -0.5, 0.5, 50, 75);
  const auto chords = two_camera_layout(grid, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(build_cmatrix(grid, chords, kDefaultSubrays, 1));
}
BENCHMARK(BM_BuildCMatrix)->Arg(40)->Arg(92)->Unit(benchmark::kMillisecond);

void BM_ForwardProject(benchmark::State& state) {
  const Grid grid = build_grid(1.0, 2.0, -0.5, 0.5, 50, 75);
  const ContributionMatrix c = build_cmatrix(grid, two_camera_layout(grid, 92)).cmatrix;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> field(grid.cell_count());
  for (double& v : field) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(forward_project(c, field));
}
BENCHMARK(BM_ForwardProject);

}  // namespace
