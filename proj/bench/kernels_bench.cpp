// Serial reference kernels against their OpenMP counterparts.
#include "oodbench/kernels.hpp"
#include "oodbench/rng.hpp"

#include <benchmark/benchmark.h>

using namespace oodbench;
using kernels::Exec;

namespace {

Matrix random_points(Index n, Index d, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(n, d);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

Exec exec_of(const benchmark::State& state) { return state.range(1) == 0 ? Exec::Serial : Exec::Parallel; }

void BM_SqDists(benchmark::State& state) {
    const Matrix a = random_points(state.range(0), 5, 1);
    const Matrix b = random_points(state.range(0), 5, 2);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::sq_dists(a, b, exec_of(state)));
    state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

void BM_Rbf(benchmark::State& state) {
    const Matrix a = random_points(state.range(0), 5, 3);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::rbf(a, a, 1.0, 1.0, exec_of(state)));
    state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

void BM_Knn(benchmark::State& state) {
    const Matrix a = random_points(state.range(0), 2, 4);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::knn(a, a, 20, true, exec_of(state)));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Density(benchmark::State& state) {
    const Matrix eval = random_points(state.range(0), 1, 5);
    const Matrix samples = random_points(1000, 1, 6);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            kernels::density(eval, samples, kernels::DensityKernel::Linear, 0.3, exec_of(state)));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MedianDistance(benchmark::State& state) {
    const Matrix a = random_points(state.range(0), 5, 7);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::median_pairwise_distance(a, exec_of(state)));
}

void sizes(benchmark::internal::Benchmark* b) {
    for (const int n : {256, 1024, 2048}) {
        b->Args({n, 0});
        b->Args({n, 1});
    }
    b->ArgNames({"n", "parallel"})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_SqDists)->Apply(sizes);
BENCHMARK(BM_Rbf)->Apply(sizes);
BENCHMARK(BM_Knn)->Apply(sizes);
BENCHMARK(BM_Density)->Apply(sizes);
BENCHMARK(BM_MedianDistance)->Apply(sizes);

BENCHMARK_MAIN();
