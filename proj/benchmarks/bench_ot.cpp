#include <benchmark/benchmark.h>

#include "pcdistill/ot.hpp"
#include "pcdistill/rng.hpp"

using namespace pcdistill;

namespace {

Mat random_features(Index n, Index d, std::uint64_t seed) {
    Rng rng(seed);
    Mat m(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < d; ++c) m(i, c) = rng.uniform();
    return m;
}

void BM_emd_bruteforce(benchmark::State& state) {
    const Index n = state.range(0);
    auto a = ot::WeightedFeatureSet::uniform(random_features(n, 3, 1));
    auto b = ot::WeightedFeatureSet::uniform(random_features(n, 3, 2));
    for (auto _ : state) benchmark::DoNotOptimize(ot::emd_bruteforce(a, b));
}
BENCHMARK(BM_emd_bruteforce)->DenseRange(4, 8);

void BM_emd_assignment(benchmark::State& state) {
    const Index n = state.range(0);
    auto a = ot::WeightedFeatureSet::uniform(random_features(n, 3, 3));
    auto b = ot::WeightedFeatureSet::uniform(random_features(n, 3, 4));
    for (auto _ : state) benchmark::DoNotOptimize(ot::emd_assignment(a, b).first);
}
BENCHMARK(BM_emd_assignment)->RangeMultiplier(2)->Range(4, 64);

void BM_sinkhorn(benchmark::State& state) {
    const Index n = state.range(0);
    const double eps = 1.0 / static_cast<double>(state.range(1));
    auto a = ot::WeightedFeatureSet::uniform(random_features(n, 3, 5));
    auto b = ot::WeightedFeatureSet::uniform(random_features(n, 3, 6));
    for (auto _ : state)
        benchmark::DoNotOptimize(ot::sinkhorn(a, b, eps, 2000000, 1e-6).cost);
}
BENCHMARK(BM_sinkhorn)->Args({16, 10})->Args({16, 100})->Args({64, 10})->Args({64, 100});

void BM_remd(benchmark::State& state) {
    const Index n = state.range(0);
    auto a = ot::WeightedFeatureSet::uniform(random_features(n, 3, 7));
    auto b = ot::WeightedFeatureSet::uniform(random_features(n, 3, 8));
    for (auto _ : state) benchmark::DoNotOptimize(ot::remd(a, b));
}
BENCHMARK(BM_remd)->RangeMultiplier(4)->Range(16, 256);

void BM_fmd_plan(benchmark::State& state) {
    const Index n = state.range(0);
    Mat ps = random_features(n, 3, 9);
    Mat pt = random_features(n, 3, 10);
    for (auto _ : state) benchmark::DoNotOptimize(ot::fmd_plan(ps, pt, 5, 0.3).weights);
}
BENCHMARK(BM_fmd_plan)->RangeMultiplier(4)->Range(64, 1024);

}  // namespace

BENCHMARK_MAIN();
