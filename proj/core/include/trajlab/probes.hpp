#pragma once

#include "trajlab/grammar.hpp"
#include "trajlab/model.hpp"
#include "trajlab/tokenizer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace trajlab {

struct PairMeta {
    std::optional<bool> congruent;
    std::optional<Number> subject_number;
    std::optional<Number> attractor_number;
    std::optional<Number> correct_verb_number;

    bool operator==(const PairMeta&) const = default;
};

// One grammatical/ungrammatical sentence pair.
struct MinimalPair {
    std::string pair_id;
    std::string probe_id;
    std::string phenomenon;
    std::string good;
    std::string bad;
    PairMeta meta;
};

struct ProbeSuite {
    std::string probe_id;
    std::string phenomenon;
    std::vector<MinimalPair> pairs;

    // Enforces >= 2 pairs, unique pair ids, good != bad, and congruent ==
    // (subject == attractor) wherever all three are present.
    void validate() const;
};

struct PairScore {
    std::string pair_id;
    double logp_good = 0.0;
    double logp_bad = 0.0;
    bool correct = false; // strictly logp_good > logp_bad; ties are incorrect
};

struct StratumAccuracy {
    std::string stratum;
    int64_t n_pairs = 0;
    double accuracy = 0.0;
};

struct SuiteResult {
    std::string probe_id;
    std::vector<PairScore> scores;
    std::vector<StratumAccuracy> strata; // "all" first, then defined strata
    double accuracy = 0.0;
};

// Sum over positions 2..n of the log-probability the model assigns to the
// realized token, skipping positions whose realized token is punctuation.
// The opening token is never scored (it has no preceding context).
// Throws ValueError for sentences of fewer than 2 tokens or longer than the
// model context.
double score_sentence(const Parameters& p, const Vocabulary& v, const std::string& sentence);

PairScore compare_pair(const Parameters& p, const Vocabulary& v, const MinimalPair& pair);

// Scores every pair, processing sentences in fixed-size left-padded batches,
// and aggregates overall and per-stratum accuracies. Batching never changes
// scores relative to one-by-one evaluation.
SuiteResult eval_suite(const Parameters& p, const Vocabulary& v, const ProbeSuite& suite,
                       int64_t eval_batch_size = 300);

// Accuracy bookkeeping shared by the native and external scoring paths.
SuiteResult aggregate_scores(const ProbeSuite& suite, std::vector<PairScore> scores);

// Phenomena understood by generate_suite.
extern const char* const kPhenomena[5]; // simple_sv, wh_question, nounpp,
                                        // short_nested_inner, short_nested_outer

// Builds a suite of pairs differing in exactly one verb token. Condition
// coverage (S/P, and S/P x S/P where an attractor exists) is round-robin
// balanced; when the grammar admits no more than n_pairs distinct pairs the
// whole space is enumerated instead. holdout_fraction > 0 draws nouns and
// verbs from the held-out lexicon tail reserved by
// GrammarSpec::training_subset.
ProbeSuite generate_suite(const GrammarSpec& g, const std::string& phenomenon, int64_t n_pairs,
                          double holdout_fraction = 0.0, const std::string& probe_id = "");

// JSON-lines persistence: one MinimalPair per line with fields
// pair_id, probe_id, phenomenon, good, bad, meta.
std::string suite_to_jsonl(const ProbeSuite& suite);
ProbeSuite suite_from_jsonl(const std::string& text);
void save_suite(const ProbeSuite& suite, const std::filesystem::path& path);
ProbeSuite load_suite(const std::filesystem::path& path);

// External log-probability exchange, JSON-lines records
//   {"pair_id": ..., "side": "good"|"bad", "tokens": [...], "logprobs": [...]}
// The tokens must concatenate to the pair's sentence; logprobs[i] is the
// log-probability of tokens[i] given the prefix (logprobs[0] is ignored,
// matching the unscored first token). Punctuation is excluded by token-string
// match against punctuation_chars.
std::vector<PairScore> ingest_external_logprobs(
    const ProbeSuite& suite, const std::filesystem::path& path,
    std::string_view punctuation_chars = Vocabulary::kDefaultPunctuation);

// Writes the exchange file for this model, the same records a third-party
// scorer would provide.
void write_external_logprobs(const Parameters& p, const Vocabulary& v, const ProbeSuite& suite,
                             const std::filesystem::path& path);

} // namespace trajlab
