#include "trajlab/model.hpp"

#include <benchmark/benchmark.h>

using namespace trajlab;

namespace {

ModelConfig bench_config(int64_t d_model) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_model = d_model;
    cfg.d_ff = 4 * d_model;
    cfg.context_len = 64;
    cfg.vocab_size = 320;
    cfg.seed = 7;
    return cfg;
}

Batch random_batch(const ModelConfig& cfg, int64_t rows) {
    Batch b;
    b.batch_size = rows;
    b.context_len = cfg.context_len;
    b.pad_id = -1;
    b.token_ids.resize(static_cast<size_t>(rows * cfg.context_len));
    b.target_ids.resize(b.token_ids.size());
    uint64_t x = 99;
    for (size_t i = 0; i < b.token_ids.size(); ++i) {
        x = x * 6364136223846793005ULL + 1442695040888963407ULL;
        b.token_ids[i] = static_cast<int32_t>(x % static_cast<uint64_t>(cfg.vocab_size));
        b.target_ids[i] = static_cast<int32_t>((x >> 17) % static_cast<uint64_t>(cfg.vocab_size));
    }
    return b;
}

} // namespace

static void TrainingStep(benchmark::State& state) {
    const auto cfg = bench_config(state.range(0));
    const auto params = init_parameters(cfg);
    const auto batch = random_batch(cfg, 16);
    for (auto _ : state) {
        auto lg = loss_and_grads(params, batch);
        benchmark::DoNotOptimize(lg.loss);
    }
    state.SetItemsProcessed(state.iterations() * 16 * cfg.context_len);
}
BENCHMARK(TrainingStep)->Arg(32)->Arg(48)->Arg(64)->Unit(benchmark::kMillisecond);

static void ForwardBatch(benchmark::State& state) {
    const auto cfg = bench_config(48);
    const auto params = init_parameters(cfg);
    const int64_t rows = state.range(0);
    const int64_t len = 16;
    std::vector<int32_t> ids(static_cast<size_t>(rows * len), 5);
    std::vector<int32_t> first_real(static_cast<size_t>(rows), 0);
    std::vector<real> out;
    for (auto _ : state) {
        forward_logprobs_batch(params, ids.data(), first_real.data(), rows, len, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * rows * len);
}
BENCHMARK(ForwardBatch)->Arg(32)->Arg(300)->Unit(benchmark::kMillisecond);
