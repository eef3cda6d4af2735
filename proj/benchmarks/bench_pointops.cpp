#include <benchmark/benchmark.h>

#include "pcdistill/dataset.hpp"
#include "pcdistill/pointops.hpp"
#include "pcdistill/rng.hpp"

using namespace pcdistill;

namespace {

Mat shape_cloud(Index n, std::uint64_t seed) {
    Rng rng(seed);
    return harness::make_cloud(harness::ShapeClass::sphere, n, 0.02, rng);
}

void BM_fps(benchmark::State& state) {
    const Index n = state.range(0);
    Mat cloud = shape_cloud(n, 1);
    for (auto _ : state) benchmark::DoNotOptimize(pointops::fps(cloud, n / 2, 7));
}
BENCHMARK(BM_fps)->RangeMultiplier(4)->Range(64, 4096);

void BM_knn(benchmark::State& state) {
    const Index n = state.range(0);
    Mat ref = shape_cloud(n, 2);
    Mat query = shape_cloud(n / 2, 3);
    for (auto _ : state) benchmark::DoNotOptimize(pointops::knn(query, ref, 8).indices);
}
BENCHMARK(BM_knn)->RangeMultiplier(4)->Range(64, 2048);

void BM_pairwise_dist(benchmark::State& state) {
    const Index n = state.range(0);
    Mat a = shape_cloud(n, 4);
    Mat b = shape_cloud(n, 5);
    for (auto _ : state) benchmark::DoNotOptimize(pointops::pairwise_dist(a, b));
}
BENCHMARK(BM_pairwise_dist)->RangeMultiplier(4)->Range(64, 1024);

void BM_interp_upsample(benchmark::State& state) {
    const Index n = state.range(0);
    Mat pos_fine = shape_cloud(n, 6);
    Mat pos_coarse = shape_cloud(n / 4, 7);
    Mat feat(n / 4, 32);
    Rng rng(8);
    for (Index i = 0; i < feat.rows(); ++i)
        for (Index c = 0; c < 32; ++c) feat(i, c) = rng.normal();
    for (auto _ : state)
        benchmark::DoNotOptimize(pointops::interp_upsample(feat, pos_coarse, pos_fine));
}
BENCHMARK(BM_interp_upsample)->RangeMultiplier(4)->Range(64, 1024);

}  // namespace

BENCHMARK_MAIN();
