#include "trajlab/grammar.hpp"
#include "trajlab/io.hpp"
#include "trajlab/tokenizer.hpp"

#include <benchmark/benchmark.h>

using namespace trajlab;

namespace {

GrammarSpec small_grammar() {
    GrammarSpec g;
    g.nouns = {{"dog", "dogs"}, {"cat", "cats"}, {"bird", "birds"}, {"farmer", "farmers"}};
    g.verbs = {{"runs", "run"}, {"sees", "see"}, {"sings", "sing"}};
    g.prepositions = {"near", "behind"};
    g.wh_words = {"where", "when"};
    g.template_weights = {{"simple_sv", 0.4}, {"wh_question", 0.3}, {"nounpp", 0.2}, {"object_rc", 0.1}};
    g.seed = 11;
    return g;
}

} // namespace

static void TrainBpe(benchmark::State& state) {
    const auto corpus = generate_corpus(small_grammar(), state.range(0));
    for (auto _ : state) {
        auto vocab = train_bpe(corpus, 320);
        benchmark::DoNotOptimize(vocab.size());
    }
    state.SetBytesProcessed(state.iterations() * static_cast<int64_t>(corpus.size()));
}
BENCHMARK(TrainBpe)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

static void EncodeCorpus(benchmark::State& state) {
    const auto corpus = generate_corpus(small_grammar(), 2000);
    const auto vocab = train_bpe(corpus, 320);
    for (auto _ : state) {
        size_t total = 0;
        for (const auto& line : split(corpus, '\n')) {
            total += vocab.encode(line).size();
        }
        benchmark::DoNotOptimize(total);
    }
    state.SetBytesProcessed(state.iterations() * static_cast<int64_t>(corpus.size()));
}
BENCHMARK(EncodeCorpus)->Unit(benchmark::kMillisecond);
