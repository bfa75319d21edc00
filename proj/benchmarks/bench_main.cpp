#include <vector>

#include <benchmark/benchmark.h>

#include "textures.hpp"
#include "vstab/affine.hpp"
#include "vstab/frameio.hpp"
#include "vstab/metrics.hpp"
#include "vstab/motion.hpp"
#include "vstab/predictor.hpp"
#include "vstab/rng.hpp"
#include "vstab/stacking.hpp"

using namespace vstab;

namespace {

void BM_Warp(benchmark::State& state) {
    const int w = static_cast<int>(state.range(0));
    const Frame f = testing::smooth_texture(w, w * 9 / 16, 1);
    const AffineMatrix m = params_to_matrix({0.01, 3.5, -2.25}, frame_center(f.width, f.height));
    for (auto _ : state) benchmark::DoNotOptimize(warp(f, m));
    state.SetItemsProcessed(state.iterations() * f.width * f.height);
}
BENCHMARK(BM_Warp)->Arg(320)->Arg(640)->Arg(1280)->Unit(benchmark::kMillisecond);

void BM_ResizeArea(benchmark::State& state) {
    const Frame f = testing::smooth_texture(1280, 720, 2);
    const int s = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(resize_area(f, s, s));
}
BENCHMARK(BM_ResizeArea)->Arg(30)->Arg(125)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_EstimateTransform(benchmark::State& state) {
    const int w = static_cast<int>(state.range(0));
    const int h = w * 9 / 16;
    const Frame a = testing::smooth_texture(w, h, 3);
    const Frame b = warp(a, params_to_matrix({0.005, 2.5, -1.5}, frame_center(w, h)));
    for (auto _ : state) benchmark::DoNotOptimize(estimate_transform(a, b));
}
BENCHMARK(BM_EstimateTransform)->Arg(320)->Arg(640)->Unit(benchmark::kMillisecond);

void BM_ForwardLevel(benchmark::State& state) {
    const int level = static_cast<int>(state.range(0));
    const PredictorModel model(ConvSpec::toy(), 7);
    HistoryBuffer history;
    const Frame f = testing::smooth_texture(320, 180, 4);
    for (int i = 0; i < kHistoryLength; ++i) history.push(f);
    const FrameStack stack = build_stack(history, f, level);
    for (auto _ : state) benchmark::DoNotOptimize(forward_level(model, stack));
}
BENCHMARK(BM_ForwardLevel)->DenseRange(1, 3)->Unit(benchmark::kMillisecond);

void BM_StabilityRatio(benchmark::State& state) {
    Rng rng(5);
    std::vector<double> x(static_cast<std::size_t>(state.range(0)));
    double walk = 0.0;
    for (double& v : x) v = (walk += rng.normal());
    for (auto _ : state) benchmark::DoNotOptimize(low_frequency_ratio(x));
}
BENCHMARK(BM_StabilityRatio)->Arg(150)->Arg(1000)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
