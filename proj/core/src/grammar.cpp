#include "trajlab/grammar.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"
#include "trajlab/rng.hpp"

#include <algorithm>
#include <cmath>

namespace trajlab {

namespace {

bool template_known(const std::string& name) {
    for (const char* t : kTemplateNames) {
        if (name == t) {
            return true;
        }
    }
    return false;
}

size_t heldout_count(size_t n, double fraction) {
    if (fraction <= 0.0) {
        return 0;
    }
    return static_cast<size_t>(std::ceil(fraction * static_cast<double>(n)));
}

} // namespace

void GrammarSpec::validate() const {
    for (const auto& e : nouns) {
        if (e.singular.empty() || e.plural.empty() || e.singular == e.plural) {
            throw ValueError("noun entry must have distinct singular/plural forms: '" + e.singular +
                             "' / '" + e.plural + "'");
        }
    }
    for (const auto& e : verbs) {
        if (e.singular.empty() || e.plural.empty() || e.singular == e.plural) {
            throw ValueError("verb entry must have distinct singular/plural forms: '" + e.singular +
                             "' / '" + e.plural + "'");
        }
    }
    if (template_weights.empty()) {
        throw ValueError("grammar has no templates");
    }
    double total = 0.0;
    for (const auto& [name, w] : template_weights) {
        if (!template_known(name)) {
            throw ValueError("unknown template '" + name + "'");
        }
        if (w < 0.0) {
            throw ValueError("template weight for '" + name + "' is negative");
        }
        total += w;
    }
    if (total <= 0.0) {
        throw ValueError("all template weights are zero");
    }
    for (const auto& [name, w] : template_weights) {
        if (w <= 0.0) {
            continue;
        }
        if (nouns.empty()) {
            throw ValueError("template '" + name + "' enabled but noun lexicon is empty");
        }
        if (verbs.empty()) {
            throw ValueError("template '" + name + "' enabled but verb lexicon is empty");
        }
        if (name == "wh_question" && wh_words.empty()) {
            throw ValueError("template 'wh_question' enabled but wh lexicon is empty");
        }
        if (name == "nounpp" && prepositions.empty()) {
            throw ValueError("template 'nounpp' enabled but preposition lexicon is empty");
        }
    }
}

GrammarSpec GrammarSpec::training_subset(double holdout_fraction) const {
    GrammarSpec g = *this;
    if (holdout_fraction > 0.0) {
        size_t hn = heldout_count(nouns.size(), holdout_fraction);
        size_t hv = heldout_count(verbs.size(), holdout_fraction);
        if (hn >= nouns.size() || hv >= verbs.size()) {
            throw ValueError("holdout fraction leaves no training lexicon");
        }
        g.nouns.resize(nouns.size() - hn);
        g.verbs.resize(verbs.size() - hv);
    }
    return g;
}

std::pair<size_t, size_t> GrammarSpec::heldout_noun_range(double holdout_fraction) const {
    size_t h = heldout_count(nouns.size(), holdout_fraction);
    return {nouns.size() - h, nouns.size()};
}

std::pair<size_t, size_t> GrammarSpec::heldout_verb_range(double holdout_fraction) const {
    size_t h = heldout_count(verbs.size(), holdout_fraction);
    return {verbs.size() - h, verbs.size()};
}

GrammarSpec GrammarSpec::from_config(const ConfigFile& cfg) {
    GrammarSpec g;
    g.seed = static_cast<uint64_t>(cfg.get_int("grammar", "seed", 0));
    auto parse_pair = [](const std::string& v, const char* what) {
        auto parts = split(std::string(trim(v)), ' ');
        std::vector<std::string> forms;
        for (auto& p : parts) {
            if (!trim(p).empty()) {
                forms.emplace_back(trim(p));
            }
        }
        if (forms.size() != 2) {
            throw ConfigError(std::string(what) + " entry must be '<singular> <plural>', got '" + v +
                              "'");
        }
        return LexEntry{forms[0], forms[1]};
    };
    for (const auto& v : cfg.get_all("lexicon", "noun")) {
        g.nouns.push_back(parse_pair(v, "noun"));
    }
    for (const auto& v : cfg.get_all("lexicon", "verb")) {
        g.verbs.push_back(parse_pair(v, "verb"));
    }
    for (const auto& v : cfg.get_all("lexicon", "preposition")) {
        g.prepositions.emplace_back(trim(v));
    }
    for (const auto& v : cfg.get_all("lexicon", "wh")) {
        g.wh_words.emplace_back(trim(v));
    }
    for (const char* name : kTemplateNames) {
        if (auto w = cfg.get("templates", name)) {
            g.template_weights.emplace_back(name, parse_double(*w));
        }
    }
    g.validate();
    return g;
}

GrammarSpec GrammarSpec::load(const std::filesystem::path& path) {
    return from_config(ConfigFile::load(path));
}

namespace surface {

std::string simple_sv(const GrammarSpec& g, size_t noun, Number subject, size_t verb,
                      Number verb_number) {
    return "the " + g.nouns[noun].form(subject) + " " + g.verbs[verb].form(verb_number);
}

std::string wh_question(const GrammarSpec& g, size_t wh, size_t noun, Number subject, size_t verb,
                        Number aux_number) {
    const char* aux = aux_number == Number::singular ? "does" : "do";
    // The lexical verb stays in its base form, which coincides with the
    // plural surface form.
    return g.wh_words[wh] + " " + aux + " the " + g.nouns[noun].form(subject) + " " +
           g.verbs[verb].plural;
}

std::string nounpp(const GrammarSpec& g, size_t noun1, Number subject, size_t prep, size_t noun2,
                   Number attractor, size_t verb, Number verb_number) {
    return "the " + g.nouns[noun1].form(subject) + " " + g.prepositions[prep] + " the " +
           g.nouns[noun2].form(attractor) + " " + g.verbs[verb].form(verb_number);
}

std::string object_rc(const GrammarSpec& g, size_t noun1, Number outer, size_t noun2, Number inner,
                      size_t inner_verb, Number inner_verb_number, size_t outer_verb,
                      Number outer_verb_number) {
    return "the " + g.nouns[noun1].form(outer) + " that the " + g.nouns[noun2].form(inner) + " " +
           g.verbs[inner_verb].form(inner_verb_number) + " " +
           g.verbs[outer_verb].form(outer_verb_number);
}

} // namespace surface

std::string generate_corpus(const GrammarSpec& g, int64_t n_sentences) {
    if (n_sentences <= 0) {
        throw ValueError("generate_corpus: n_sentences must be positive");
    }
    g.validate();

    double total = 0.0;
    for (const auto& [name, w] : g.template_weights) {
        total += w;
    }

    Rng rng(g.seed);
    auto pick_number = [&]() {
        return rng.next_below(2) == 0 ? Number::singular : Number::plural;
    };
    auto pick = [&](size_t n) { return static_cast<size_t>(rng.next_below(n)); };

    std::string out;
    for (int64_t i = 0; i < n_sentences; ++i) {
        double r = rng.next_unit() * total;
        std::string chosen = g.template_weights.back().first;
        for (const auto& [name, w] : g.template_weights) {
            if (r < w) {
                chosen = name;
                break;
            }
            r -= w;
        }
        std::string sentence;
        if (chosen == "simple_sv") {
            Number n = pick_number();
            sentence = surface::simple_sv(g, pick(g.nouns.size()), n, pick(g.verbs.size()), n);
        } else if (chosen == "wh_question") {
            Number n = pick_number();
            sentence = surface::wh_question(g, pick(g.wh_words.size()), pick(g.nouns.size()), n,
                                            pick(g.verbs.size()), n);
        } else if (chosen == "nounpp") {
            Number subj = pick_number();
            Number attr = pick_number();
            sentence = surface::nounpp(g, pick(g.nouns.size()), subj, pick(g.prepositions.size()),
                                       pick(g.nouns.size()), attr, pick(g.verbs.size()), subj);
        } else { // object_rc
            Number outer = pick_number();
            Number inner = pick_number();
            sentence = surface::object_rc(g, pick(g.nouns.size()), outer, pick(g.nouns.size()),
                                          inner, pick(g.verbs.size()), inner,
                                          pick(g.verbs.size()), outer);
        }
        out += sentence;
        out += '\n';
    }
    return out;
}

} // namespace trajlab
