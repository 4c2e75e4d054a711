#pragma once

#include "trajlab/config.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace trajlab {

enum class Number { singular, plural };

inline Number flip(Number n) {
    return n == Number::singular ? Number::plural : Number::singular;
}
inline const char* number_code(Number n) {
    return n == Number::singular ? "S" : "P";
}

struct LexEntry {
    std::string singular;
    std::string plural;
    const std::string& form(Number n) const {
        return n == Number::singular ? singular : plural;
    }
};

// Corpus sentence templates. Probe phenomena map onto these frames:
// simple_sv and wh_question probe their own frame, nounpp probes the
// attractor frame, and the two nested phenomena flip the inner or outer
// verb of object_rc.
inline constexpr const char* kTemplateNames[] = {"simple_sv", "wh_question", "nounpp", "object_rc"};

struct GrammarSpec {
    std::vector<LexEntry> nouns;
    std::vector<LexEntry> verbs;
    std::vector<std::string> prepositions;
    std::vector<std::string> wh_words;
    std::vector<std::pair<std::string, double>> template_weights;
    uint64_t seed = 0;

    // Throws ValueError when lexicon entries collide (singular == plural),
    // weights are negative, all weights are zero, or an enabled template
    // lacks its lexicon.
    void validate() const;

    // Copy with the held-out tail of nouns and verbs removed; the tail is
    // reserved for probe suites generated with the same holdout fraction.
    GrammarSpec training_subset(double holdout_fraction) const;
    // Index ranges usable for probe generation under a holdout fraction.
    std::pair<size_t, size_t> heldout_noun_range(double holdout_fraction) const;
    std::pair<size_t, size_t> heldout_verb_range(double holdout_fraction) const;

    static GrammarSpec from_config(const ConfigFile& cfg);
    static GrammarSpec load(const std::filesystem::path& path);
};

// Surface builders. Verb slots take their number explicitly so that probe
// generation can flip exactly one of them; corpus generation always passes
// the agreeing number. The auxiliary of wh_question ("does"/"do") is a
// template function word, like its determiner "the".
namespace surface {
std::string simple_sv(const GrammarSpec& g, size_t noun, Number subject, size_t verb,
                      Number verb_number);
std::string wh_question(const GrammarSpec& g, size_t wh, size_t noun, Number subject,
                        size_t verb, Number aux_number);
std::string nounpp(const GrammarSpec& g, size_t noun1, Number subject, size_t prep, size_t noun2,
                   Number attractor, size_t verb, Number verb_number);
std::string object_rc(const GrammarSpec& g, size_t noun1, Number outer, size_t noun2, Number inner,
                      size_t inner_verb, Number inner_verb_number, size_t outer_verb,
                      Number outer_verb_number);
} // namespace surface

// Samples n_sentences grammatical sentences, one per line, deterministically
// from g.seed. Every verb slot agrees with its syntactic subject.
std::string generate_corpus(const GrammarSpec& g, int64_t n_sentences);

} // namespace trajlab
