#include "trajlab/probes.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"
#include "trajlab/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace trajlab {

using ordered_json = nlohmann::ordered_json;

const char* const kPhenomena[5] = {"simple_sv", "wh_question", "nounpp", "short_nested_inner",
                                   "short_nested_outer"};

void ProbeSuite::validate() const {
    if (pairs.size() < 2) {
        throw ValueError("probe suite '" + probe_id + "' must hold at least 2 pairs, has " +
                         std::to_string(pairs.size()));
    }
    std::unordered_set<std::string> seen;
    for (const auto& pair : pairs) {
        if (pair.good == pair.bad) {
            throw ValueError("pair '" + pair.pair_id + "': grammatical and ungrammatical sides are identical");
        }
        if (!seen.insert(pair.pair_id).second) {
            throw ValueError("duplicate pair_id '" + pair.pair_id + "'");
        }
        if (pair.meta.congruent && pair.meta.subject_number && pair.meta.attractor_number) {
            const bool expect = *pair.meta.subject_number == *pair.meta.attractor_number;
            if (*pair.meta.congruent != expect) {
                throw ValueError("pair '" + pair.pair_id +
                                 "': congruent flag disagrees with subject/attractor numbers");
            }
        }
    }
}

namespace {

// Sum of realized-next-token log-probabilities over one forward output.
// ids are the real (unpadded) tokens; rows start at row_offset within the
// padded sequence.
double score_from_rows(const real* rows, int64_t seq_len, int64_t vocab,
                       const std::vector<int32_t>& ids, int64_t row_offset, const Vocabulary& v) {
    (void)seq_len;
    double sum = 0.0;
    for (size_t j = 1; j < ids.size(); ++j) {
        const int32_t target = ids[j];
        if (v.is_punctuation(target)) {
            continue; // discarded target positions
        }
        const int64_t row = row_offset + static_cast<int64_t>(j) - 1;
        sum += static_cast<double>(rows[row * vocab + target]);
    }
    return sum;
}

std::vector<int32_t> tokenize_checked(const Vocabulary& v, const Parameters& p,
                                      const std::string& sentence, const std::string& label) {
    auto ids = v.encode(sentence);
    if (ids.size() < 2) {
        throw ValueError(label + ": sentence '" + sentence +
                         "' tokenizes to fewer than 2 tokens, nothing to score");
    }
    if (static_cast<int64_t>(ids.size()) > p.config.context_len) {
        throw ValueError(label + ": sentence of " + std::to_string(ids.size()) +
                         " tokens exceeds context_len " + std::to_string(p.config.context_len));
    }
    return ids;
}

// Batched scoring over pre-tokenized sentences: sentences are grouped into
// fixed-size batches, left-padded to the batch maximum.
std::vector<double> score_tokenized(const Parameters& p, const Vocabulary& v,
                                    const std::vector<std::vector<int32_t>>& sentences,
                                    int64_t batch_size) {
    std::vector<double> out(sentences.size(), 0.0);
    const int64_t V = p.config.vocab_size;
    std::vector<real> rows;
    for (size_t start = 0; start < sentences.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(sentences.size(), start + static_cast<size_t>(batch_size));
        const int64_t rows_n = static_cast<int64_t>(end - start);
        int64_t max_len = 0;
        for (size_t i = start; i < end; ++i) {
            max_len = std::max(max_len, static_cast<int64_t>(sentences[i].size()));
        }
        std::vector<int32_t> ids(static_cast<size_t>(rows_n * max_len), v.pad_id());
        std::vector<int32_t> first_real(static_cast<size_t>(rows_n), 0);
        for (size_t i = start; i < end; ++i) {
            const auto& s = sentences[i];
            const int64_t r = static_cast<int64_t>(i - start);
            const int64_t fr = max_len - static_cast<int64_t>(s.size());
            first_real[static_cast<size_t>(r)] = static_cast<int32_t>(fr);
            std::copy(s.begin(), s.end(), ids.begin() + r * max_len + fr);
        }
        forward_logprobs_batch(p, ids.data(), first_real.data(), rows_n, max_len, rows);
        for (size_t i = start; i < end; ++i) {
            const int64_t r = static_cast<int64_t>(i - start);
            const int64_t fr = first_real[static_cast<size_t>(r)];
            out[i] = score_from_rows(rows.data() + r * max_len * V, max_len, V, sentences[i], fr, v);
        }
    }
    return out;
}

} // namespace

double score_sentence(const Parameters& p, const Vocabulary& v, const std::string& sentence) {
    auto ids = tokenize_checked(v, p, sentence, "score_sentence");
    auto rows = forward_logprobs(p, ids, {});
    return score_from_rows(rows.data(), static_cast<int64_t>(ids.size()), p.config.vocab_size, ids,
                           0, v);
}

PairScore compare_pair(const Parameters& p, const Vocabulary& v, const MinimalPair& pair) {
    PairScore s;
    s.pair_id = pair.pair_id;
    try {
        s.logp_good = score_sentence(p, v, pair.good);
        s.logp_bad = score_sentence(p, v, pair.bad);
    } catch (const ValueError& e) {
        throw ValueError("pair '" + pair.pair_id + "': " + e.what());
    }
    s.correct = s.logp_good > s.logp_bad;
    return s;
}

SuiteResult eval_suite(const Parameters& p, const Vocabulary& v, const ProbeSuite& suite,
                       int64_t eval_batch_size) {
    suite.validate();
    if (eval_batch_size < 1) {
        throw ValueError("eval_suite: batch size must be positive");
    }
    std::vector<std::vector<int32_t>> sentences;
    sentences.reserve(suite.pairs.size() * 2);
    for (const auto& pair : suite.pairs) {
        sentences.push_back(tokenize_checked(v, p, pair.good, "pair '" + pair.pair_id + "'"));
        sentences.push_back(tokenize_checked(v, p, pair.bad, "pair '" + pair.pair_id + "'"));
    }
    auto scores = score_tokenized(p, v, sentences, eval_batch_size);

    std::vector<PairScore> pair_scores(suite.pairs.size());
    for (size_t i = 0; i < suite.pairs.size(); ++i) {
        pair_scores[i].pair_id = suite.pairs[i].pair_id;
        pair_scores[i].logp_good = scores[2 * i];
        pair_scores[i].logp_bad = scores[2 * i + 1];
        pair_scores[i].correct = pair_scores[i].logp_good > pair_scores[i].logp_bad;
    }
    return aggregate_scores(suite, std::move(pair_scores));
}

SuiteResult aggregate_scores(const ProbeSuite& suite, std::vector<PairScore> scores) {
    if (scores.size() != suite.pairs.size()) {
        throw ValueError("aggregate_scores: score count disagrees with suite size");
    }
    SuiteResult res;
    res.probe_id = suite.probe_id;
    res.scores = std::move(scores);

    auto add_stratum = [&](const std::string& label, auto&& member) {
        int64_t n = 0;
        int64_t n_correct = 0;
        for (size_t i = 0; i < suite.pairs.size(); ++i) {
            if (!member(suite.pairs[i].meta)) {
                continue;
            }
            ++n;
            n_correct += res.scores[i].correct ? 1 : 0;
        }
        if (n > 0) {
            res.strata.push_back(
                {label, n, static_cast<double>(n_correct) / static_cast<double>(n)});
        }
        return n;
    };

    add_stratum("all", [](const PairMeta&) { return true; });
    res.accuracy = res.strata.front().accuracy;

    add_stratum("congruent", [](const PairMeta& m) { return m.congruent && *m.congruent; });
    add_stratum("incongruent", [](const PairMeta& m) { return m.congruent && !*m.congruent; });
    add_stratum("singular", [](const PairMeta& m) {
        return m.correct_verb_number && *m.correct_verb_number == Number::singular;
    });
    add_stratum("plural", [](const PairMeta& m) {
        return m.correct_verb_number && *m.correct_verb_number == Number::plural;
    });
    add_stratum("congruent_singular", [](const PairMeta& m) {
        return m.congruent && *m.congruent && m.correct_verb_number &&
               *m.correct_verb_number == Number::singular;
    });
    add_stratum("congruent_plural", [](const PairMeta& m) {
        return m.congruent && *m.congruent && m.correct_verb_number &&
               *m.correct_verb_number == Number::plural;
    });
    add_stratum("incongruent_singular", [](const PairMeta& m) {
        return m.congruent && !*m.congruent && m.correct_verb_number &&
               *m.correct_verb_number == Number::singular;
    });
    add_stratum("incongruent_plural", [](const PairMeta& m) {
        return m.congruent && !*m.congruent && m.correct_verb_number &&
               *m.correct_verb_number == Number::plural;
    });
    return res;
}

namespace {

Number number_from_bit(uint64_t bit) {
    return bit == 0 ? Number::singular : Number::plural;
}

struct SuiteGen {
    const GrammarSpec& g;
    std::string phenomenon;
    size_t noun_lo, noun_hi, verb_lo, verb_hi;

    size_t n_nouns() const { return noun_hi - noun_lo; }
    size_t n_verbs() const { return verb_hi - verb_lo; }

    // Number of index combinations per condition.
    uint64_t space() const {
        const uint64_t N = n_nouns();
        const uint64_t V = n_verbs();
        if (phenomenon == "simple_sv") {
            return N * V;
        }
        if (phenomenon == "wh_question") {
            return g.wh_words.size() * N * V;
        }
        if (phenomenon == "nounpp") {
            return N * g.prepositions.size() * N * V;
        }
        return N * N * V * V; // nested frames
    }

    int n_conditions() const {
        return (phenomenon == "simple_sv" || phenomenon == "wh_question") ? 2 : 4;
    }

    std::string condition_code(int cond) const {
        if (n_conditions() == 2) {
            return cond == 0 ? "S" : "P";
        }
        static const char* codes[4] = {"SS", "SP", "PS", "PP"};
        return codes[cond];
    }

    MinimalPair build(int cond, uint64_t code) const {
        const uint64_t N = n_nouns();
        const uint64_t V = n_verbs();
        MinimalPair pair;
        pair.phenomenon = phenomenon;
        if (phenomenon == "simple_sv") {
            const Number n = number_from_bit(static_cast<uint64_t>(cond));
            const size_t verb = verb_lo + static_cast<size_t>(code % V);
            const size_t noun = noun_lo + static_cast<size_t>(code / V);
            pair.good = surface::simple_sv(g, noun, n, verb, n);
            pair.bad = surface::simple_sv(g, noun, n, verb, flip(n));
            pair.meta.subject_number = n;
            pair.meta.correct_verb_number = n;
        } else if (phenomenon == "wh_question") {
            const Number n = number_from_bit(static_cast<uint64_t>(cond));
            const size_t verb = verb_lo + static_cast<size_t>(code % V);
            code /= V;
            const size_t noun = noun_lo + static_cast<size_t>(code % N);
            const size_t wh = static_cast<size_t>(code / N);
            pair.good = surface::wh_question(g, wh, noun, n, verb, n);
            pair.bad = surface::wh_question(g, wh, noun, n, verb, flip(n));
            pair.meta.subject_number = n;
            pair.meta.correct_verb_number = n;
        } else if (phenomenon == "nounpp") {
            const Number subject = number_from_bit(static_cast<uint64_t>(cond >> 1));
            const Number attractor = number_from_bit(static_cast<uint64_t>(cond & 1));
            const size_t verb = verb_lo + static_cast<size_t>(code % V);
            code /= V;
            const size_t n2 = noun_lo + static_cast<size_t>(code % N);
            code /= N;
            const size_t prep = static_cast<size_t>(code % g.prepositions.size());
            const size_t n1 = noun_lo + static_cast<size_t>(code / g.prepositions.size());
            pair.good = surface::nounpp(g, n1, subject, prep, n2, attractor, verb, subject);
            pair.bad = surface::nounpp(g, n1, subject, prep, n2, attractor, verb, flip(subject));
            pair.meta.subject_number = subject;
            pair.meta.attractor_number = attractor;
            pair.meta.congruent = subject == attractor;
            pair.meta.correct_verb_number = subject;
        } else {
            // Nested object relative clause frame: outer noun is code SS[0],
            // inner noun SS[1].
            const Number outer = number_from_bit(static_cast<uint64_t>(cond >> 1));
            const Number inner = number_from_bit(static_cast<uint64_t>(cond & 1));
            const size_t v_out = verb_lo + static_cast<size_t>(code % V);
            code /= V;
            const size_t v_in = verb_lo + static_cast<size_t>(code % V);
            code /= V;
            const size_t n2 = noun_lo + static_cast<size_t>(code % N);
            const size_t n1 = noun_lo + static_cast<size_t>(code / N);
            if (phenomenon == "short_nested_inner") {
                pair.good = surface::object_rc(g, n1, outer, n2, inner, v_in, inner, v_out, outer);
                pair.bad =
                    surface::object_rc(g, n1, outer, n2, inner, v_in, flip(inner), v_out, outer);
                pair.meta.subject_number = inner;
                pair.meta.attractor_number = outer;
                pair.meta.congruent = inner == outer;
                pair.meta.correct_verb_number = inner;
            } else {
                pair.good = surface::object_rc(g, n1, outer, n2, inner, v_in, inner, v_out, outer);
                pair.bad =
                    surface::object_rc(g, n1, outer, n2, inner, v_in, inner, v_out, flip(outer));
                pair.meta.subject_number = outer;
                pair.meta.attractor_number = inner;
                pair.meta.congruent = inner == outer;
                pair.meta.correct_verb_number = outer;
            }
        }
        return pair;
    }
};

} // namespace

ProbeSuite generate_suite(const GrammarSpec& g, const std::string& phenomenon, int64_t n_pairs,
                          double holdout_fraction, const std::string& probe_id) {
    bool known = false;
    for (const char* ph : kPhenomena) {
        known = known || phenomenon == ph;
    }
    if (!known) {
        throw ValueError("unknown probe phenomenon '" + phenomenon +
                         "' (expected simple_sv, wh_question, nounpp, short_nested_inner or "
                         "short_nested_outer)");
    }
    if (n_pairs < 1) {
        throw ValueError("generate_suite: n_pairs must be positive");
    }
    if (g.nouns.empty() || g.verbs.empty()) {
        throw ValueError("phenomenon '" + phenomenon + "' unsupported: grammar lexicon is empty");
    }
    if (phenomenon == "wh_question" && g.wh_words.empty()) {
        throw ValueError("phenomenon 'wh_question' unsupported: grammar has no wh words");
    }
    if (phenomenon == "nounpp" && g.prepositions.empty()) {
        throw ValueError("phenomenon 'nounpp' unsupported: grammar has no prepositions");
    }

    SuiteGen gen{g, phenomenon, 0, g.nouns.size(), 0, g.verbs.size()};
    if (holdout_fraction > 0.0) {
        auto [nl, nh] = g.heldout_noun_range(holdout_fraction);
        auto [vl, vh] = g.heldout_verb_range(holdout_fraction);
        if (nl >= nh || vl >= vh) {
            throw ValueError("holdout fraction reserves no probe lexicon");
        }
        gen.noun_lo = nl;
        gen.noun_hi = nh;
        gen.verb_lo = vl;
        gen.verb_hi = vh;
    }

    ProbeSuite suite;
    suite.probe_id = probe_id.empty() ? phenomenon : probe_id;
    suite.phenomenon = phenomenon;

    const int n_cond = gen.n_conditions();
    const uint64_t space = gen.space();
    auto finish_pair = [&](int cond, uint64_t code) {
        MinimalPair pair = gen.build(cond, code);
        char seq[16];
        std::snprintf(seq, sizeof(seq), "%06zu", suite.pairs.size());
        pair.pair_id = phenomenon + "-" + gen.condition_code(cond) + "-" + seq;
        pair.probe_id = suite.probe_id;
        suite.pairs.push_back(std::move(pair));
    };

    if (space * static_cast<uint64_t>(n_cond) <= static_cast<uint64_t>(n_pairs)) {
        // Small grammar: emit the whole space.
        for (int cond = 0; cond < n_cond; ++cond) {
            for (uint64_t code = 0; code < space; ++code) {
                finish_pair(cond, code);
            }
        }
    } else {
        Rng rng = Rng(g.seed).split(fnv1a64(phenomenon.data(), phenomenon.size()));
        std::vector<std::unordered_set<uint64_t>> used(static_cast<size_t>(n_cond));
        int64_t produced = 0;
        int exhausted = 0;
        int cond = 0;
        while (produced < n_pairs && exhausted < n_cond) {
            auto& seen = used[static_cast<size_t>(cond)];
            if (seen.size() == space) {
                ++exhausted;
                cond = (cond + 1) % n_cond;
                continue;
            }
            exhausted = 0;
            uint64_t code = rng.next_below(space);
            int attempts = 0;
            while (seen.count(code) && attempts < 1000) {
                code = rng.next_below(space);
                ++attempts;
            }
            if (seen.count(code)) {
                // Sparse leftovers: walk to the first unused code.
                while (seen.count(code)) {
                    code = (code + 1) % space;
                }
            }
            seen.insert(code);
            finish_pair(cond, code);
            ++produced;
            cond = (cond + 1) % n_cond;
        }
    }
    suite.validate();
    return suite;
}

namespace {

const char* number_str(Number n) {
    return n == Number::singular ? "S" : "P";
}

Number number_from_str(const std::string& s, const std::string& context) {
    if (s == "S") {
        return Number::singular;
    }
    if (s == "P") {
        return Number::plural;
    }
    throw FormatError(context + ": number must be 'S' or 'P', got '" + s + "'");
}

ordered_json meta_to_json(const PairMeta& m) {
    ordered_json j = ordered_json::object();
    if (m.congruent) {
        j["congruent"] = *m.congruent;
    }
    if (m.subject_number) {
        j["subject_number"] = number_str(*m.subject_number);
    }
    if (m.attractor_number) {
        j["attractor_number"] = number_str(*m.attractor_number);
    }
    if (m.correct_verb_number) {
        j["correct_verb_number"] = number_str(*m.correct_verb_number);
    }
    return j;
}

PairMeta meta_from_json(const ordered_json& j, const std::string& context) {
    PairMeta m;
    if (j.contains("congruent")) {
        if (!j["congruent"].is_boolean()) {
            throw FormatError(context + ": meta.congruent must be boolean");
        }
        m.congruent = j["congruent"].get<bool>();
    }
    if (j.contains("subject_number")) {
        m.subject_number = number_from_str(j["subject_number"].get<std::string>(), context);
    }
    if (j.contains("attractor_number")) {
        m.attractor_number = number_from_str(j["attractor_number"].get<std::string>(), context);
    }
    if (j.contains("correct_verb_number")) {
        m.correct_verb_number =
            number_from_str(j["correct_verb_number"].get<std::string>(), context);
    }
    return m;
}

} // namespace

std::string suite_to_jsonl(const ProbeSuite& suite) {
    std::string out;
    for (const auto& pair : suite.pairs) {
        ordered_json j;
        j["pair_id"] = pair.pair_id;
        j["probe_id"] = pair.probe_id;
        j["phenomenon"] = pair.phenomenon;
        j["good"] = pair.good;
        j["bad"] = pair.bad;
        j["meta"] = meta_to_json(pair.meta);
        out += j.dump();
        out += '\n';
    }
    return out;
}

ProbeSuite suite_from_jsonl(const std::string& text) {
    ProbeSuite suite;
    size_t lineno = 0;
    for (const auto& line : split(text, '\n')) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        const std::string context = "suite line " + std::to_string(lineno);
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(context + ": malformed JSON record: " + e.what());
        }
        for (const char* field : {"pair_id", "probe_id", "phenomenon", "good", "bad"}) {
            if (!j.contains(field) || !j[field].is_string()) {
                throw FormatError(context + ": missing string field '" + field + "'");
            }
        }
        MinimalPair pair;
        pair.pair_id = j["pair_id"].get<std::string>();
        pair.probe_id = j["probe_id"].get<std::string>();
        pair.phenomenon = j["phenomenon"].get<std::string>();
        pair.good = j["good"].get<std::string>();
        pair.bad = j["bad"].get<std::string>();
        if (j.contains("meta")) {
            if (!j["meta"].is_object()) {
                throw FormatError(context + ": meta must be an object");
            }
            pair.meta = meta_from_json(j["meta"], context);
        }
        if (suite.pairs.empty()) {
            suite.probe_id = pair.probe_id;
            suite.phenomenon = pair.phenomenon;
        }
        suite.pairs.push_back(std::move(pair));
    }
    suite.validate();
    return suite;
}

void save_suite(const ProbeSuite& suite, const std::filesystem::path& path) {
    write_text_file(path, suite_to_jsonl(suite));
}

ProbeSuite load_suite(const std::filesystem::path& path) {
    try {
        return suite_from_jsonl(read_text_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<PairScore> ingest_external_logprobs(const ProbeSuite& suite,
                                                const std::filesystem::path& path,
                                                std::string_view punctuation_chars) {
    suite.validate();
    const std::string text = read_text_file(path);

    struct Side {
        std::vector<std::string> tokens;
        std::vector<double> logprobs;
    };
    std::unordered_map<std::string, Side> records; // key: pair_id "\x1f" side

    size_t lineno = 0;
    size_t n_records = 0;
    for (const auto& line : split(text, '\n')) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        const std::string context = path.string() + " line " + std::to_string(lineno);
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(context + ": malformed JSON record: " + e.what());
        }
        if (!j.contains("pair_id") || !j["pair_id"].is_string() || !j.contains("side") ||
            !j["side"].is_string() || !j.contains("tokens") || !j["tokens"].is_array() ||
            !j.contains("logprobs") || !j["logprobs"].is_array()) {
            throw FormatError(context +
                              ": record must carry pair_id, side, tokens[] and logprobs[]");
        }
        const std::string side = j["side"].get<std::string>();
        if (side != "good" && side != "bad") {
            throw FormatError(context + ": side must be 'good' or 'bad', got '" + side + "'");
        }
        Side rec;
        for (const auto& t : j["tokens"]) {
            if (!t.is_string()) {
                throw FormatError(context + ": tokens must be strings");
            }
            rec.tokens.push_back(t.get<std::string>());
        }
        for (const auto& lp : j["logprobs"]) {
            if (!lp.is_number()) {
                throw FormatError(context + ": logprobs must be numbers");
            }
            rec.logprobs.push_back(lp.get<double>());
        }
        const std::string key = j["pair_id"].get<std::string>() + "\x1f" + side;
        if (!records.emplace(key, std::move(rec)).second) {
            throw FormatError(context + ": duplicate record for pair '" +
                              j["pair_id"].get<std::string>() + "' side '" + side + "'");
        }
        ++n_records;
    }
    if (n_records == 0) {
        throw ValueError(path.string() + ": no log-probability records for a suite of " +
                         std::to_string(suite.pairs.size()) + " pairs");
    }

    auto is_punct_token = [&](const std::string& tok) {
        if (tok.empty()) {
            return false;
        }
        for (char c : tok) {
            if (punctuation_chars.find(c) == std::string_view::npos) {
                return false;
            }
        }
        return true;
    };

    auto score_side = [&](const MinimalPair& pair, const std::string& side,
                          const std::string& sentence) {
        auto it = records.find(pair.pair_id + "\x1f" + side);
        if (it == records.end()) {
            throw ValueError(path.string() + ": missing log-probabilities for pair '" +
                             pair.pair_id + "' side '" + side + "'");
        }
        const Side& rec = it->second;
        if (rec.tokens.size() != rec.logprobs.size()) {
            throw ShapeMismatchError("pair '" + pair.pair_id + "' side '" + side + "': " +
                                     std::to_string(rec.tokens.size()) + " tokens but " +
                                     std::to_string(rec.logprobs.size()) + " log-probabilities");
        }
        std::string joined;
        for (const auto& t : rec.tokens) {
            joined += t;
        }
        if (joined != sentence) {
            throw ShapeMismatchError("pair '" + pair.pair_id + "' side '" + side +
                                     "': tokens do not reassemble the declared sentence");
        }
        if (rec.tokens.size() < 2) {
            throw ShapeMismatchError("pair '" + pair.pair_id + "' side '" + side +
                                     "': fewer than 2 tokens, nothing to score");
        }
        double sum = 0.0;
        for (size_t i = 1; i < rec.tokens.size(); ++i) {
            if (is_punct_token(rec.tokens[i])) {
                continue;
            }
            sum += rec.logprobs[i];
        }
        return sum;
    };

    std::vector<PairScore> out;
    out.reserve(suite.pairs.size());
    for (const auto& pair : suite.pairs) {
        PairScore s;
        s.pair_id = pair.pair_id;
        s.logp_good = score_side(pair, "good", pair.good);
        s.logp_bad = score_side(pair, "bad", pair.bad);
        s.correct = s.logp_good > s.logp_bad;
        out.push_back(std::move(s));
    }
    return out;
}

void write_external_logprobs(const Parameters& p, const Vocabulary& v, const ProbeSuite& suite,
                             const std::filesystem::path& path) {
    std::string out;
    for (const auto& pair : suite.pairs) {
        for (const auto& [side, sentence] :
             {std::pair<const char*, const std::string&>{"good", pair.good},
              std::pair<const char*, const std::string&>{"bad", pair.bad}}) {
            auto ids = tokenize_checked(v, p, sentence, "pair '" + pair.pair_id + "'");
            auto rows = forward_logprobs(p, ids, {});
            ordered_json j;
            j["pair_id"] = pair.pair_id;
            j["side"] = side;
            auto tokens = ordered_json::array();
            auto lps = ordered_json::array();
            for (size_t t = 0; t < ids.size(); ++t) {
                tokens.push_back(v.token_string(ids[t]));
                if (t == 0) {
                    lps.push_back(0.0); // no context for the opening token
                } else {
                    lps.push_back(static_cast<double>(
                        rows[(t - 1) * static_cast<size_t>(p.config.vocab_size) +
                             static_cast<size_t>(ids[t])]));
                }
            }
            j["tokens"] = tokens;
            j["logprobs"] = lps;
            out += j.dump();
            out += '\n';
        }
    }
    write_text_file(path, out);
}

} // namespace trajlab
