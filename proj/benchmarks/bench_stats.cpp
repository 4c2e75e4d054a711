#include "trajlab/rng.hpp"
#include "trajlab/stats.hpp"
#include "trajlab/trajectory.hpp"

#include <benchmark/benchmark.h>

using namespace trajlab;

static void SpearmanSmall(benchmark::State& state) {
    Rng rng(3);
    std::vector<double> a(static_cast<size_t>(state.range(0)));
    std::vector<double> b(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.next_unit();
        b[i] = rng.next_unit();
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(spearman(a, b));
    }
}
BENCHMARK(SpearmanSmall)->Arg(8)->Arg(64);

static void PermutationTest(benchmark::State& state) {
    Rng rng(5);
    const size_t n_seeds = 8;
    const size_t n_probes = static_cast<size_t>(state.range(0));
    std::vector<std::vector<double>> ranks(n_seeds);
    for (auto& v : ranks) {
        std::vector<double> steps(n_probes);
        for (auto& s : steps) {
            s = rng.next_unit();
        }
        v = rank_probes(steps);
    }
    for (auto _ : state) {
        auto res = permutation_test(ranks, 200, 42);
        benchmark::DoNotOptimize(res.p_value);
    }
}
BENCHMARK(PermutationTest)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);
