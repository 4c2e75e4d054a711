#include "trajlab/pipeline.hpp"

#include "trajlab/checkpoint.hpp"
#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"
#include "trajlab/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <map>
#include <thread>

namespace trajlab {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {
constexpr const char* kToolVersion = "traj-lab 0.1.0";
constexpr const char* kEvalHeader = "seed,step,probe_id,stratum,n_pairs,accuracy";
} // namespace

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::data: return "data";
        case Stage::train: return "train";
        case Stage::eval: return "eval";
        case Stage::analyze: return "analyze";
        case Stage::report: return "report";
    }
    return "?";
}

Stage stage_from_name(const std::string& name) {
    for (Stage s : {Stage::data, Stage::train, Stage::eval, Stage::analyze, Stage::report}) {
        if (stage_name(s) == name) {
            return s;
        }
    }
    throw ConfigError("unknown stage '" + name + "' (expected data, train, eval, analyze, report)");
}

std::set<Stage> all_stages() {
    return {Stage::data, Stage::train, Stage::eval, Stage::analyze, Stage::report};
}

namespace artifacts {
std::filesystem::path corpus(const RunConfig& c) { return c.out_dir / "corpus.txt"; }
std::filesystem::path vocab(const RunConfig& c) { return c.out_dir / "vocab.txt"; }
std::filesystem::path suite(const RunConfig& c, const std::string& name) {
    return c.out_dir / "suites" / (name + ".jsonl");
}
std::filesystem::path seed_dir(const RunConfig& c, int64_t seed_index) {
    return c.out_dir / "seeds" / ("seed" + std::to_string(seed_index));
}
std::filesystem::path eval_csv(const RunConfig& c) { return c.out_dir / "eval.csv"; }
std::filesystem::path analysis_dir(const RunConfig& c) { return c.out_dir / "analysis"; }
std::filesystem::path analysis_json(const RunConfig& c) {
    return analysis_dir(c) / "analysis.json";
}
std::filesystem::path report_dir(const RunConfig& c) { return c.out_dir / "report"; }
std::filesystem::path manifest(const RunConfig& c) { return c.out_dir / "manifest.json"; }
} // namespace artifacts

void RunConfig::validate() const {
    if (grammar_path.empty() == corpus_path.empty()) {
        throw ConfigError("config must name exactly one of [corpus] grammar or [corpus] corpus");
    }
    if (!grammar_path.empty()) {
        if (!std::filesystem::exists(grammar_path)) {
            throw ConfigError("grammar file does not exist: " + grammar_path.string());
        }
        if (n_sentences <= 0) {
            throw ConfigError("[corpus] n_sentences must be positive when generating");
        }
    }
    if (!corpus_path.empty() && !std::filesystem::exists(corpus_path)) {
        throw ConfigError("corpus file does not exist: " + corpus_path.string());
    }
    if (vocab_target < Vocabulary::kBaseSize) {
        throw ConfigError("[tokenizer] target_size below minimum " +
                          std::to_string(Vocabulary::kBaseSize));
    }
    if (model.n_layers < 1 || model.n_heads < 1 || model.d_model < 1 || model.d_ff < 1 ||
        model.context_len < 2) {
        throw ConfigError("[model] counts must be positive (context_len at least 2)");
    }
    if (model.d_model % model.n_heads != 0) {
        throw ConfigError("[model] d_model must be divisible by n_heads");
    }
    if (n_seeds < 1 || max_steps < 1 || checkpoint_every < 1) {
        throw ConfigError("[train] n_seeds, max_steps and checkpoint_every must be positive");
    }
    if (suites.empty()) {
        throw ConfigError("config defines no probe suites");
    }
    for (const auto& s : suites) {
        if (!s.generated() && !std::filesystem::exists(s.path)) {
            throw ConfigError("suite file does not exist: " + s.path.string());
        }
        if (s.generated() && s.n_pairs < 2) {
            throw ConfigError("suite '" + s.name + "' must generate at least 2 pairs");
        }
    }
    for (double th : {analysis.chance, analysis.acquisition_fraction, analysis.learned_threshold}) {
        if (th <= 0.0 || th >= 1.0) {
            throw ConfigError("analysis thresholds must lie in (0, 1)");
        }
    }
    if (analysis.window < 1 || analysis.k_checkpoints < 1 || analysis.n_perm < 1) {
        throw ConfigError("[analysis] window, k_checkpoints and n_perm must be positive");
    }
    if (eval_batch < 1) {
        throw ConfigError("[eval] batch_size must be positive");
    }
    if (stage_map) {
        stage_map->validate();
    }
}

RunConfig RunConfig::from_config(const ConfigFile& cfg, const std::filesystem::path& base_dir) {
    RunConfig c;
    auto resolve = [&](const std::string& p) -> std::filesystem::path {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };

    if (auto g = cfg.get("corpus", "grammar")) {
        c.grammar_path = resolve(*g);
    }
    if (auto p = cfg.get("corpus", "corpus")) {
        c.corpus_path = resolve(*p);
    }
    c.n_sentences = cfg.get_int("corpus", "n_sentences", 0);
    c.corpus_holdout = cfg.get_double("corpus", "holdout", 0.0);

    c.vocab_target = cfg.get_int("tokenizer", "target_size", 320);
    c.punctuation = cfg.get_or("tokenizer", "punctuation", Vocabulary::kDefaultPunctuation);
    c.bpe_train_lines = cfg.get_int("tokenizer", "train_lines", 0);

    c.model.n_layers = cfg.get_int("model", "n_layers", 2);
    c.model.n_heads = cfg.get_int("model", "n_heads", 4);
    c.model.d_model = cfg.get_int("model", "d_model", 128);
    c.model.d_ff = cfg.get_int("model", "d_ff", 4 * c.model.d_model);
    c.model.context_len = cfg.get_int("model", "context_len", 128);

    c.optimizer.learning_rate = cfg.get_double("optimizer", "learning_rate", 1e-5);
    c.optimizer.beta1 = cfg.get_double("optimizer", "beta1", 0.9);
    c.optimizer.beta2 = cfg.get_double("optimizer", "beta2", 0.999);
    c.optimizer.epsilon = cfg.get_double("optimizer", "epsilon", 1e-8);
    c.optimizer.batch_size = cfg.get_int("optimizer", "batch_size", 16);

    c.n_seeds = cfg.get_int("train", "n_seeds", 1);
    c.base_seed = static_cast<uint64_t>(cfg.get_int("train", "base_seed", 1));
    c.max_steps = cfg.get_int("train", "max_steps", 1000);
    c.checkpoint_every = cfg.get_int("train", "checkpoint_every", 100);

    c.eval_batch = cfg.get_int("eval", "batch_size", 300);

    for (const auto& section : cfg.section_names()) {
        if (section.rfind("suite:", 0) != 0) {
            continue;
        }
        SuiteSpec spec;
        spec.name = section.substr(6);
        if (spec.name.empty()) {
            throw ConfigError("suite section needs a name: [suite:<name>]");
        }
        if (auto p = cfg.get(section, "path")) {
            spec.path = resolve(*p);
        } else {
            spec.phenomenon = cfg.require(section, "phenomenon");
            spec.n_pairs = cfg.require_int(section, "n_pairs");
            spec.holdout = cfg.get_double(section, "holdout", 0.0);
        }
        c.suites.push_back(std::move(spec));
    }

    c.analysis.window = cfg.get_int("analysis", "window", 6);
    c.analysis.k_checkpoints = cfg.get_int("analysis", "k_checkpoints", 3);
    c.analysis.n_perm = cfg.get_int("analysis", "n_perm", 1000);
    c.analysis.perm_seed = static_cast<uint64_t>(cfg.get_int("analysis", "perm_seed", 0));
    c.analysis.chance = cfg.get_double("analysis", "chance_threshold", 0.5);
    c.analysis.acquisition_fraction = cfg.get_double("analysis", "acquisition_fraction", 0.9);
    c.analysis.learned_threshold = cfg.get_double("analysis", "learned_threshold", 0.55);

    if (cfg.has_section("stagemap")) {
        if (auto p = cfg.get("stagemap", "path")) {
            c.stage_map = StageMap::load(resolve(*p));
        } else {
            c.stage_map = StageMap::from_config(cfg);
        }
    }

    c.out_dir = resolve(cfg.get_or("output", "dir", "out"));
    c.jobs = static_cast<int>(cfg.get_int("run", "jobs", 1));
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    return from_config(ConfigFile::load(path), path.has_parent_path() ? path.parent_path()
                                                                      : std::filesystem::path("."));
}

std::string RunConfig::content_hash() const {
    std::string blob = "traj-lab config v1\n";
    auto add = [&](const std::string& k, const std::string& v) { blob += k + "=" + v + "\n"; };
    if (!grammar_path.empty()) {
        add("grammar", read_text_file(grammar_path));
    }
    if (!corpus_path.empty()) {
        add("corpus", read_text_file(corpus_path));
    }
    add("n_sentences", std::to_string(n_sentences));
    add("corpus_holdout", format_double(corpus_holdout));
    add("vocab_target", std::to_string(vocab_target));
    add("punctuation", punctuation);
    add("bpe_train_lines", std::to_string(bpe_train_lines));
    add("model", std::to_string(model.n_layers) + "/" + std::to_string(model.n_heads) + "/" +
                     std::to_string(model.d_model) + "/" + std::to_string(model.d_ff) + "/" +
                     std::to_string(model.context_len));
    add("optimizer", format_double(optimizer.learning_rate) + "/" + format_double(optimizer.beta1) +
                         "/" + format_double(optimizer.beta2) + "/" +
                         format_double(optimizer.epsilon) + "/" +
                         std::to_string(optimizer.batch_size));
    add("train", std::to_string(n_seeds) + "/" + std::to_string(base_seed) + "/" +
                     std::to_string(max_steps) + "/" + std::to_string(checkpoint_every));
    add("eval_batch", std::to_string(eval_batch));
    for (const auto& s : suites) {
        if (s.generated()) {
            add("suite:" + s.name, s.phenomenon + "/" + std::to_string(s.n_pairs) + "/" +
                                       format_double(s.holdout));
        } else {
            add("suite:" + s.name, read_text_file(s.path));
        }
    }
    add("analysis", std::to_string(analysis.window) + "/" + std::to_string(analysis.k_checkpoints) +
                        "/" + std::to_string(analysis.n_perm) + "/" +
                        std::to_string(analysis.perm_seed) + "/" + format_double(analysis.chance) +
                        "/" + format_double(analysis.acquisition_fraction) + "/" +
                        format_double(analysis.learned_threshold));
    if (stage_map) {
        std::string sm = format_double(stage_map->learned_threshold) + "/" +
                         std::to_string(static_cast<int>(stage_map->rule));
        for (const auto& e : stage_map->stages) {
            sm += "/" + std::to_string(e.stage) + "|" + e.child_label + "|" + e.probe_id;
        }
        add("stagemap", sm);
    }
    return hash_hex(fnv1a64(blob.data(), blob.size()));
}

// ---------------------------------------------------------------------------
// manifest

namespace {

struct Manifest {
    json root;

    static Manifest load_or_empty(const std::filesystem::path& path, const std::string& config_hash) {
        Manifest m;
        if (std::filesystem::exists(path)) {
            try {
                m.root = json::parse(read_text_file(path));
            } catch (const json::parse_error&) {
                m.root = json::object();
            }
        }
        if (!m.root.is_object() || !m.root.contains("stages") ||
            m.root.value("config_hash", "") != config_hash) {
            m.root = json::object();
            m.root["format"] = 1;
            m.root["tool"] = kToolVersion;
            m.root["config_hash"] = config_hash;
            m.root["stages"] = json::object();
        }
        return m;
    }

    void save(const std::filesystem::path& path) const {
        write_text_file(path, root.dump(2) + "\n");
    }

    bool stage_current(const std::string& stage, const std::string& fingerprint,
                       const std::filesystem::path& out_dir) const {
        if (!root["stages"].contains(stage)) {
            return false;
        }
        const json& rec = root["stages"][stage];
        if (rec.value("fingerprint", "") != fingerprint) {
            return false;
        }
        for (const auto& [rel, hash] : rec["outputs"].items()) {
            const auto path = out_dir / rel;
            if (!std::filesystem::exists(path)) {
                return false;
            }
            if (hash_hex(fnv1a64_file(path)) != hash.get<std::string>()) {
                return false;
            }
        }
        return true;
    }

    void record_stage(const std::string& stage, const std::string& fingerprint,
                      const std::vector<std::filesystem::path>& outputs,
                      const std::filesystem::path& out_dir) {
        json rec;
        rec["fingerprint"] = fingerprint;
        json outs = json::object();
        for (const auto& p : outputs) {
            const std::string rel = std::filesystem::relative(p, out_dir).generic_string();
            outs[rel] = hash_hex(fnv1a64_file(p));
        }
        rec["outputs"] = outs;
        root["stages"][stage] = rec;
    }
};

std::string combine_hashes(const std::vector<std::string>& parts) {
    std::string blob;
    for (const auto& p : parts) {
        blob += p;
        blob += '\n';
    }
    return hash_hex(fnv1a64(blob.data(), blob.size()));
}

std::string file_hash_or_throw(const std::filesystem::path& p, const std::string& needed_by,
                               const std::string& produced_by) {
    if (!std::filesystem::exists(p)) {
        throw ValueError("stage '" + needed_by + "' requires " + p.string() +
                         ", which stage '" + produced_by + "' has not produced yet");
    }
    return hash_hex(fnv1a64_file(p));
}

// Checkpoint steps the training schedule produces.
std::vector<int64_t> expected_checkpoint_steps(const RunConfig& c) {
    std::vector<int64_t> steps = {0};
    for (int64_t s = c.checkpoint_every; s <= c.max_steps; s += c.checkpoint_every) {
        steps.push_back(s);
    }
    if (steps.back() != c.max_steps) {
        steps.push_back(c.max_steps);
    }
    return steps;
}

// Runs tasks [0, n) over a small worker pool; the work must only touch its
// own output slot. The first exception wins and is rethrown after join.
void parallel_for(int64_t n, int jobs, const std::function<void(int64_t)>& work) {
    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    if (n_threads == 1) {
        for (int64_t i = 0; i < n; ++i) {
            work(i);
        }
        return;
    }
    std::atomic<int64_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) {
        threads.emplace_back([&]() {
            while (!failed.load(std::memory_order_relaxed)) {
                const int64_t i = next.fetch_add(1);
                if (i >= n) {
                    return;
                }
                try {
                    work(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) {
                        first_error = std::current_exception();
                    }
                    failed.store(true);
                }
            }
        });
    }
    for (auto& th : threads) {
        th.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

// ---------------------------------------------------------------------------
// stage: data

std::vector<std::filesystem::path> run_data_stage(const RunConfig& c) {
    std::vector<std::filesystem::path> outputs;

    std::string corpus_text;
    if (!c.grammar_path.empty()) {
        GrammarSpec grammar = GrammarSpec::load(c.grammar_path);
        const GrammarSpec training = grammar.training_subset(c.corpus_holdout);
        corpus_text = generate_corpus(training, c.n_sentences);
    } else {
        corpus_text = read_text_file(c.corpus_path);
    }
    write_text_file(artifacts::corpus(c), corpus_text);
    outputs.push_back(artifacts::corpus(c));

    std::string bpe_input = corpus_text;
    if (c.bpe_train_lines > 0) {
        auto lines = split(corpus_text, '\n');
        std::string head;
        for (size_t i = 0; i < lines.size() && i < static_cast<size_t>(c.bpe_train_lines); ++i) {
            head += lines[i];
            head += '\n';
        }
        bpe_input = head;
    }
    const Vocabulary vocab =
        train_bpe(bpe_input, static_cast<int32_t>(c.vocab_target), c.punctuation);
    vocab.save(artifacts::vocab(c));
    outputs.push_back(artifacts::vocab(c));

    std::optional<GrammarSpec> grammar;
    if (!c.grammar_path.empty()) {
        grammar = GrammarSpec::load(c.grammar_path);
    }
    for (const auto& spec : c.suites) {
        const auto out_path = artifacts::suite(c, spec.name);
        if (spec.generated()) {
            if (!grammar) {
                throw ConfigError("suite '" + spec.name +
                                  "' asks for generation but the corpus is a raw file");
            }
            ProbeSuite suite =
                generate_suite(*grammar, spec.phenomenon, spec.n_pairs, spec.holdout, spec.name);
            save_suite(suite, out_path);
        } else {
            ProbeSuite suite = load_suite(spec.path); // validates
            save_suite(suite, out_path);
        }
        outputs.push_back(out_path);
    }
    return outputs;
}

// ---------------------------------------------------------------------------
// stage: train

std::vector<std::filesystem::path> run_train_stage(const RunConfig& c) {
    const std::string corpus_text = read_text_file(artifacts::corpus(c));
    const Vocabulary vocab = Vocabulary::load(artifacts::vocab(c));

    std::vector<std::filesystem::path> outputs;
    const auto steps = expected_checkpoint_steps(c);

    parallel_for(c.n_seeds, c.jobs, [&](int64_t k) {
        ModelConfig cfg = c.model;
        cfg.vocab_size = vocab.size();
        cfg.seed = c.base_seed + static_cast<uint64_t>(k);
        BatchStream batches = BatchStream::from_text(corpus_text, vocab, cfg.context_len,
                                                     c.optimizer.batch_size, cfg.seed);
        TrainSettings settings;
        settings.optimizer = c.optimizer;
        settings.max_steps = c.max_steps;
        settings.checkpoint_every = c.checkpoint_every;
        train(cfg, settings, batches, artifacts::seed_dir(c, k));
    });

    for (int64_t k = 0; k < c.n_seeds; ++k) {
        for (int64_t s : steps) {
            outputs.push_back(artifacts::seed_dir(c, k) / checkpoint_filename(s));
        }
        outputs.push_back(artifacts::seed_dir(c, k) / "train_log.csv");
    }
    return outputs;
}

// ---------------------------------------------------------------------------
// stage: eval

std::vector<std::filesystem::path> run_eval_stage(const RunConfig& c) {
    const Vocabulary vocab = Vocabulary::load(artifacts::vocab(c));
    std::vector<ProbeSuite> suites;
    for (const auto& spec : c.suites) {
        suites.push_back(load_suite(artifacts::suite(c, spec.name)));
    }
    const auto steps = expected_checkpoint_steps(c);

    struct Task {
        int64_t seed_index;
        int64_t step;
    };
    std::vector<Task> tasks;
    for (int64_t k = 0; k < c.n_seeds; ++k) {
        for (int64_t s : steps) {
            tasks.push_back({k, s});
        }
    }
    std::vector<std::string> chunks(tasks.size());

    parallel_for(static_cast<int64_t>(tasks.size()), c.jobs, [&](int64_t i) {
        const Task& task = tasks[static_cast<size_t>(i)];
        const auto ckpt_path =
            artifacts::seed_dir(c, task.seed_index) / checkpoint_filename(task.step);
        if (!std::filesystem::exists(ckpt_path)) {
            throw ValueError("stage 'eval' requires checkpoint " + ckpt_path.string() +
                             ", which stage 'train' has not produced yet");
        }
        const CheckpointRecord rec = load_checkpoint(ckpt_path);
        std::string rows;
        for (const auto& suite : suites) {
            const SuiteResult res = eval_suite(rec.params, vocab, suite, c.eval_batch);
            for (const auto& st : res.strata) {
                rows += std::to_string(c.base_seed + static_cast<uint64_t>(task.seed_index));
                rows += ',';
                rows += std::to_string(task.step);
                rows += ',';
                rows += suite.probe_id;
                rows += ',';
                rows += st.stratum;
                rows += ',';
                rows += std::to_string(st.n_pairs);
                rows += ',';
                rows += format_double(st.accuracy);
                rows += '\n';
            }
        }
        chunks[static_cast<size_t>(i)] = std::move(rows);
    });

    std::string csv = std::string(kEvalHeader) + "\n";
    for (const auto& chunk : chunks) {
        csv += chunk;
    }
    write_text_file(artifacts::eval_csv(c), csv);
    return {artifacts::eval_csv(c)};
}

} // namespace

// ---------------------------------------------------------------------------
// stage: analyze (exposed for tests via analyze_matrix in this TU)

namespace {

struct AnalysisResult {
    std::vector<AcquisitionProfile> profiles;
    std::vector<std::string> common_probes;
    std::vector<std::string> below_chance_probes;
    std::vector<std::pair<std::string, double>> mean_acquisition;
    std::optional<PermutationResult> rank_correlation;
    std::string rank_correlation_skipped;
    std::optional<TercileGroups> groups;
    std::string groups_skipped;
    std::optional<AnovaResult> anova;
    std::map<std::string, std::vector<double>> anova_group_slopes;
    std::string anova_skipped;
    std::optional<EarlyDerivative> early_derivative;
    std::string early_derivative_skipped;
    std::map<std::string, BiasCurves> bias;
    std::optional<StageComparison> stage_comparison;
    std::optional<StageMap> stage_map_used;
};

std::optional<StageMap> default_stage_map(const EvalMatrix& m, double learned_threshold) {
    StageMap map;
    map.learned_threshold = learned_threshold;
    const std::vector<std::pair<std::string, const char*>> wanted = {
        {"simple_sv", "Simple sentences in Subject-Verb order"},
        {"wh_question", "Wh-questions"},
        {"short_nested_outer", "Relative Clauses"},
    };
    int stage = 1;
    for (const auto& [probe, label] : wanted) {
        if (std::find(m.probes.begin(), m.probes.end(), probe) == m.probes.end()) {
            return std::nullopt;
        }
        map.stages.push_back({stage++, label, probe});
    }
    return map;
}

AnalysisResult analyze_matrix(const EvalMatrix& m, const AnalysisSettings& s,
                              const std::optional<StageMap>& stage_map) {
    AnalysisResult res;
    res.profiles = acquisition_profiles(m, s.window, s.chance, s.acquisition_fraction);

    const size_t n_seeds = m.seeds.size();
    const size_t n_probes = m.probes.size();
    auto profile_at = [&](size_t seed_i, size_t probe_i) -> const AcquisitionProfile& {
        return res.profiles[seed_i * n_probes + probe_i];
    };

    // Probes above chance for every seed.
    std::vector<size_t> common_idx;
    for (size_t pi = 0; pi < n_probes; ++pi) {
        bool everywhere = true;
        for (size_t si = 0; si < n_seeds && everywhere; ++si) {
            everywhere = profile_at(si, pi).above_chance;
        }
        if (everywhere) {
            common_idx.push_back(pi);
            res.common_probes.push_back(m.probes[pi]);
        } else {
            res.below_chance_probes.push_back(m.probes[pi]);
        }
    }

    for (size_t pi : common_idx) {
        double mean = 0.0;
        for (size_t si = 0; si < n_seeds; ++si) {
            mean += static_cast<double>(*profile_at(si, pi).acquisition_step);
        }
        res.mean_acquisition.emplace_back(m.probes[pi], mean / static_cast<double>(n_seeds));
    }

    if (n_seeds < 2) {
        res.rank_correlation_skipped = "needs at least 2 seeds";
    } else if (common_idx.size() < 3) {
        res.rank_correlation_skipped = "fewer than 3 probes above chance in every seed";
    } else {
        std::vector<std::vector<double>> rank_vectors;
        for (size_t si = 0; si < n_seeds; ++si) {
            std::vector<double> steps;
            for (size_t pi : common_idx) {
                steps.push_back(static_cast<double>(*profile_at(si, pi).acquisition_step));
            }
            rank_vectors.push_back(rank_probes(steps));
        }
        res.rank_correlation = permutation_test(rank_vectors, s.n_perm, s.perm_seed);
    }

    if (common_idx.size() < 3) {
        res.groups_skipped = "fewer than 3 probes above chance in every seed";
        res.anova_skipped = res.groups_skipped;
        res.early_derivative_skipped = res.groups_skipped;
    } else {
        res.groups = tercile_groups(res.mean_acquisition, res.below_chance_probes);

        std::map<std::string, std::vector<double>> slopes;
        for (size_t pi : common_idx) {
            const int g = res.groups->group_of(m.probes[pi]);
            const std::string key = g == 0 ? "early" : g == 1 ? "middle" : "late";
            for (size_t si = 0; si < n_seeds; ++si) {
                const auto& prof = profile_at(si, pi);
                slopes[key].push_back(
                    learning_rate_slope(prof.smoothed, m.steps, prof.acquisition_step));
            }
        }
        res.anova_group_slopes = slopes;
        std::vector<std::vector<double>> groups_vec;
        for (const char* key : {"early", "middle", "late"}) {
            if (slopes.count(key) && slopes[key].size() >= 2) {
                groups_vec.push_back(slopes[key]);
            }
        }
        if (groups_vec.size() >= 2) {
            res.anova = one_way_anova(groups_vec);
        } else {
            res.anova_skipped = "fewer than 2 groups with 2 observations each";
        }

        if (static_cast<int64_t>(m.steps.size()) >= s.k_checkpoints + 1) {
            res.early_derivative =
                early_derivative_fraction(m, *res.groups, s.window, s.k_checkpoints);
        } else {
            res.early_derivative_skipped = "fewer than k+1 checkpoints";
        }
    }

    for (size_t pi = 0; pi < n_probes; ++pi) {
        BiasCurves curves = bias_curves(m, m.probes[pi], s.window);
        if (!curves.curves.empty()) {
            res.bias.emplace(m.probes[pi], std::move(curves));
        }
    }

    res.stage_map_used = stage_map;
    if (!res.stage_map_used) {
        res.stage_map_used = default_stage_map(m, s.learned_threshold);
    }
    if (res.stage_map_used) {
        res.stage_comparison = compare_orders(m, *res.stage_map_used, s.window);
    }
    return res;
}

std::string render_analysis_json(const RunConfig& c, const EvalMatrix& m,
                                 const AnalysisResult& r) {
    ordered_json j;
    j["tool"] = kToolVersion;
    j["config_hash"] = c.content_hash();
    // Method choices that the underlying texts leave open, flagged here so
    // every report is self-describing.
    j["methods"] = {
        {"rank_correlation", "mean pairwise Spearman over seeds, average-rank ties"},
        {"p_value", "permutation with add-one correction"},
        {"tercile_rule", "equal thirds by ascending mean acquisition step, remainder to earlier groups"},
        {"learning_rate", "least-squares slope of smoothed accuracy through the acquisition step"},
        {"acquisition_time", "earliest step at 90% of final smoothed accuracy, window-smoothed"},
        {"stage_order_rule",
         r.stage_map_used && r.stage_map_used->rule == StageMap::Rule::acquisition_time
             ? "acquisition_time"
             : "threshold_crossing"},
    };
    j["settings"] = {{"window", c.analysis.window},
                     {"k_checkpoints", c.analysis.k_checkpoints},
                     {"n_perm", c.analysis.n_perm},
                     {"perm_seed", c.analysis.perm_seed},
                     {"chance_threshold", c.analysis.chance},
                     {"acquisition_fraction", c.analysis.acquisition_fraction},
                     {"learned_threshold", c.analysis.learned_threshold}};
    j["seeds"] = m.seeds;
    j["steps"] = m.steps;
    j["probes"] = m.probes;

    ordered_json acq = ordered_json::object();
    for (size_t pi = 0; pi < m.probes.size(); ++pi) {
        ordered_json per_seed = ordered_json::object();
        for (size_t si = 0; si < m.seeds.size(); ++si) {
            const auto& prof = r.profiles[si * m.probes.size() + pi];
            ordered_json p;
            p["final_accuracy"] = prof.final_accuracy;
            p["above_chance"] = prof.above_chance;
            p["acquisition_step"] =
                prof.acquisition_step ? ordered_json(*prof.acquisition_step) : ordered_json(nullptr);
            p["rank"] = prof.rank ? ordered_json(*prof.rank) : ordered_json(nullptr);
            per_seed[std::to_string(m.seeds[si])] = p;
        }
        ordered_json entry;
        double mean = 0.0;
        bool has_mean = false;
        for (const auto& [probe, step] : r.mean_acquisition) {
            if (probe == m.probes[pi]) {
                mean = step;
                has_mean = true;
            }
        }
        entry["mean_acquisition_step"] = has_mean ? ordered_json(mean) : ordered_json(nullptr);
        entry["per_seed"] = per_seed;
        acq[m.probes[pi]] = entry;
    }
    j["acquisition"] = acq;
    j["common_probes"] = r.common_probes;
    j["below_chance_probes"] = r.below_chance_probes;

    if (r.rank_correlation) {
        j["rank_correlation"] = {{"R", r.rank_correlation->observed_R},
                                 {"p_value", r.rank_correlation->p_value},
                                 {"n_perm", r.rank_correlation->n_perm}};
    } else {
        j["rank_correlation"] = {{"skipped", r.rank_correlation_skipped}};
    }

    if (r.groups) {
        j["groups"] = {{"early", r.groups->early},
                       {"middle", r.groups->middle},
                       {"late", r.groups->late},
                       {"below_chance", r.groups->below_chance}};
    } else {
        j["groups"] = {{"skipped", r.groups_skipped}};
    }

    if (r.anova) {
        ordered_json slopes = ordered_json::object();
        for (const auto& [group, values] : r.anova_group_slopes) {
            slopes[group] = values;
        }
        j["anova"] = {{"F", r.anova->F},
                      {"p", r.anova->p},
                      {"df_between", r.anova->df_between},
                      {"df_within", r.anova->df_within},
                      {"degenerate", r.anova->degenerate},
                      {"group_slopes", slopes}};
    } else {
        j["anova"] = {{"skipped", r.anova_skipped}};
    }

    if (r.early_derivative) {
        ordered_json per_probe = ordered_json::object();
        for (const auto& [probe, d] : r.early_derivative->derivative_per_probe) {
            per_probe[probe] = d;
        }
        j["early_derivative"] = {{"k_checkpoints", c.analysis.k_checkpoints},
                                 {"fraction_early", r.early_derivative->fraction_early},
                                 {"fraction_middle", r.early_derivative->fraction_middle},
                                 {"fraction_late", r.early_derivative->fraction_late},
                                 {"fraction_above_chance", r.early_derivative->fraction_above_chance},
                                 {"per_probe", per_probe}};
    } else {
        j["early_derivative"] = {{"skipped", r.early_derivative_skipped}};
    }

    ordered_json bias = ordered_json::object();
    for (const auto& [probe, curves] : r.bias) {
        ordered_json entry;
        entry["strata"] = ordered_json::array();
        for (const auto& [stratum, curve] : curves.curves) {
            entry["strata"].push_back(stratum);
        }
        entry["missing_strata"] = curves.missing_strata;
        bias[probe] = entry;
    }
    j["bias"] = bias;

    if (r.stage_comparison) {
        ordered_json per_seed = ordered_json::array();
        for (const auto& seed : r.stage_comparison->per_seed) {
            ordered_json e;
            e["seed"] = seed.seed;
            e["matches"] = seed.matches;
            ordered_json steps = ordered_json::array();
            for (const auto& st : seed.stage_steps) {
                steps.push_back(st ? ordered_json(*st) : ordered_json(nullptr));
            }
            e["stage_steps"] = steps;
            if (!seed.matches) {
                e["reason"] = seed.reason;
            }
            per_seed.push_back(e);
        }
        j["stage_comparison"] = {
            {"n_stages", r.stage_comparison->n_stages},
            {"n_matching_seeds", r.stage_comparison->n_matching_seeds},
            {"chance_probability", r.stage_comparison->chance_probability},
            {"per_seed", per_seed}};
    } else {
        j["stage_comparison"] = {{"skipped", "no stage map and no default probes present"}};
    }
    return j.dump(2) + "\n";
}

std::string acquisition_csv(const EvalMatrix& m, const AnalysisResult& r) {
    std::string out = "seed,probe,final_accuracy,above_chance,acquisition_step,rank\n";
    for (size_t si = 0; si < m.seeds.size(); ++si) {
        for (size_t pi = 0; pi < m.probes.size(); ++pi) {
            const auto& prof = r.profiles[si * m.probes.size() + pi];
            out += std::to_string(m.seeds[si]) + "," + prof.probe + "," +
                   format_double(prof.final_accuracy) + "," + (prof.above_chance ? "1" : "0") + ",";
            out += prof.acquisition_step ? std::to_string(*prof.acquisition_step) : "";
            out += ",";
            out += prof.rank ? format_double(*prof.rank) : "";
            out += "\n";
        }
    }
    return out;
}

std::string groups_csv(const AnalysisResult& r) {
    std::string out = "probe,group\n";
    if (r.groups) {
        for (const auto& [label, probes] :
             {std::pair<const char*, const std::vector<std::string>&>{"early", r.groups->early},
              {"middle", r.groups->middle},
              {"late", r.groups->late},
              {"below_chance", r.groups->below_chance}}) {
            for (const auto& p : probes) {
                out += p + std::string(",") + label + "\n";
            }
        }
    }
    return out;
}

std::string summary_csv(const AnalysisResult& r) {
    std::string out = "metric,value\n";
    auto add = [&](const std::string& k, const std::string& v) { out += k + "," + v + "\n"; };
    if (r.rank_correlation) {
        add("rank_correlation_R", format_double(r.rank_correlation->observed_R));
        add("rank_correlation_p", format_double(r.rank_correlation->p_value));
        add("rank_correlation_n_perm", std::to_string(r.rank_correlation->n_perm));
    }
    if (r.anova) {
        add("anova_F", format_double(r.anova->F));
        add("anova_p", format_double(r.anova->p));
        add("anova_degenerate", r.anova->degenerate ? "1" : "0");
    }
    if (r.early_derivative) {
        add("early_derivative_fraction_above_chance",
            format_double(r.early_derivative->fraction_above_chance));
    }
    if (r.stage_comparison) {
        add("stage_order_matching_seeds", std::to_string(r.stage_comparison->n_matching_seeds));
        add("stage_order_chance_probability",
            format_double(r.stage_comparison->chance_probability));
    }
    return out;
}

std::string bias_csv(const EvalMatrix& m, const AnalysisResult& r) {
    std::string out = "probe,stratum,step,accuracy\n";
    for (const auto& [probe, curves] : r.bias) {
        for (const auto& [stratum, curve] : curves.curves) {
            for (size_t t = 0; t < curve.size(); ++t) {
                out += probe + "," + stratum + "," + std::to_string(m.steps[t]) + "," +
                       format_double(curve[t]) + "\n";
            }
        }
    }
    return out;
}

std::string stage_order_csv(const AnalysisResult& r) {
    std::string out = "seed,matches,stage_steps,reason\n";
    if (r.stage_comparison) {
        for (const auto& seed : r.stage_comparison->per_seed) {
            out += std::to_string(seed.seed) + "," + (seed.matches ? "1" : "0") + ",";
            for (size_t i = 0; i < seed.stage_steps.size(); ++i) {
                if (i > 0) {
                    out += "|";
                }
                out += seed.stage_steps[i] ? std::to_string(*seed.stage_steps[i]) : "never";
            }
            out += "," + seed.reason + "\n";
        }
    }
    return out;
}

std::vector<std::filesystem::path> run_analyze_stage(const RunConfig& c) {
    const EvalMatrix m = EvalMatrix::load(artifacts::eval_csv(c));
    const AnalysisResult r = analyze_matrix(m, c.analysis, c.stage_map);

    const auto dir = artifacts::analysis_dir(c);
    std::vector<std::filesystem::path> outputs;
    auto emit = [&](const std::string& name, const std::string& body) {
        write_text_file(dir / name, body);
        outputs.push_back(dir / name);
    };
    emit("analysis.json", render_analysis_json(c, m, r));
    emit("acquisition.csv", acquisition_csv(m, r));
    emit("groups.csv", groups_csv(r));
    emit("summary.csv", summary_csv(r));
    emit("bias_curves.csv", bias_csv(m, r));
    emit("stage_order.csv", stage_order_csv(r));
    return outputs;
}

// ---------------------------------------------------------------------------
// stage: report

std::vector<std::filesystem::path> run_report_stage(const RunConfig& c) {
    const EvalMatrix m = EvalMatrix::load(artifacts::eval_csv(c));
    const AnalysisResult r = analyze_matrix(m, c.analysis, c.stage_map);

    ReportBundle bundle;
    bundle.config_hash = c.content_hash();
    bundle.seeds = m.seeds;
    bundle.steps = m.steps;

    bundle.tables.push_back({"acquisition.csv", acquisition_csv(m, r)});
    bundle.tables.push_back({"groups.csv", groups_csv(r)});
    bundle.tables.push_back({"bias_curves.csv", bias_csv(m, r)});
    bundle.tables.push_back({"stage_order.csv", stage_order_csv(r)});

    // Fig: acquisition bars.
    std::string fig_acquisition;
    if (!r.mean_acquisition.empty() && r.groups) {
        std::vector<AcquisitionBar> bars;
        for (const auto& [probe, mean] : r.mean_acquisition) {
            AcquisitionBar bar;
            bar.probe = probe;
            bar.mean_step = mean;
            bar.group = r.groups->group_of(probe);
            const size_t pi = static_cast<size_t>(
                std::find(m.probes.begin(), m.probes.end(), probe) - m.probes.begin());
            for (size_t si = 0; si < m.seeds.size(); ++si) {
                const auto& prof = r.profiles[si * m.probes.size() + pi];
                if (prof.acquisition_step) {
                    bar.seed_steps.push_back(static_cast<double>(*prof.acquisition_step));
                }
            }
            bars.push_back(std::move(bar));
        }
        fig_acquisition = render_acquisition_bars(std::move(bars));
    } else {
        fig_acquisition = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"200\" height=\"40\">"
                          "<!-- no above-chance probes to plot --></svg>\n";
    }
    bundle.figures.push_back({"fig_acquisition.svg", fig_acquisition});

    // Fig: group mean curves with SEM band, below-chance group included.
    {
        std::vector<GroupCurve> gc;
        auto member_curves = [&](const std::vector<std::string>& probes) {
            std::vector<std::vector<double>> curves;
            for (const auto& probe : probes) {
                const size_t pi = static_cast<size_t>(
                    std::find(m.probes.begin(), m.probes.end(), probe) - m.probes.begin());
                std::vector<double> mean_curve(m.steps.size(), 0.0);
                for (size_t si = 0; si < m.seeds.size(); ++si) {
                    const auto curve = m.curve(si, pi);
                    for (size_t t = 0; t < curve.size(); ++t) {
                        mean_curve[t] += curve[t];
                    }
                }
                for (auto& v : mean_curve) {
                    v /= static_cast<double>(m.seeds.size());
                }
                curves.push_back(smooth(mean_curve, c.analysis.window));
            }
            return curves;
        };
        if (r.groups) {
            gc.push_back({"early", member_curves(r.groups->early)});
            gc.push_back({"middle", member_curves(r.groups->middle)});
            gc.push_back({"late", member_curves(r.groups->late)});
            if (!r.groups->below_chance.empty()) {
                gc.push_back({"below chance", member_curves(r.groups->below_chance)});
            }
        } else {
            gc.push_back({"all probes", member_curves(m.probes)});
        }
        bundle.figures.push_back({"fig_groups.svg", render_group_curves(m.steps, gc)});
    }

    // Fig: learned stage matrix at the final checkpoint.
    if (r.stage_map_used) {
        const LearnedGrid grid = learned_matrix(m, *r.stage_map_used, {m.steps.back()});
        bundle.figures.push_back({"fig_stages.svg", render_stage_matrix(grid)});
        std::string grid_csv = "agent";
        for (const auto& label : grid.stage_labels) {
            grid_csv += "," + label;
        }
        grid_csv += "\n";
        for (size_t a = 0; a < grid.agents.size(); ++a) {
            grid_csv += grid.agents[a];
            for (size_t s = 0; s < grid.stage_labels.size(); ++s) {
                grid_csv += grid.learned(a, s) ? ",1" : ",0";
            }
            grid_csv += "\n";
        }
        bundle.tables.push_back({"learned_grid.csv", grid_csv});
    } else {
        bundle.figures.push_back(
            {"fig_stages.svg", "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"200\" "
                               "height=\"40\"><!-- no stage map --></svg>\n"});
    }

    // Fig: bias trajectories.
    {
        std::vector<BiasPanel> panels;
        for (const auto& [probe, curves] : r.bias) {
            panels.push_back({probe, curves});
        }
        std::string svg;
        if (panels.empty()) {
            svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"200\" height=\"40\">"
                  "<!-- no congruency strata recorded --></svg>\n";
        } else {
            svg = render_bias_curves(m.steps, panels);
        }
        bundle.figures.push_back({"fig_bias.svg", svg});
    }

    bundle.write(artifacts::report_dir(c));
    std::vector<std::filesystem::path> outputs;
    for (const auto& doc : bundle.tables) {
        outputs.push_back(artifacts::report_dir(c) / doc.name);
    }
    for (const auto& doc : bundle.figures) {
        outputs.push_back(artifacts::report_dir(c) / doc.name);
    }
    return outputs;
}

} // namespace

PipelineResult run_pipeline(const RunConfig& config, const std::set<Stage>& stages) {
    config.validate();
    std::filesystem::create_directories(config.out_dir);

    const std::string config_hash = config.content_hash();
    Manifest manifest = Manifest::load_or_empty(artifacts::manifest(config), config_hash);

    PipelineResult result;
    result.out_dir = config.out_dir;

    auto require = [&](Stage needed_by, Stage producer, const std::filesystem::path& path) {
        return file_hash_or_throw(path, stage_name(needed_by), stage_name(producer));
    };

    auto run_stage = [&](Stage stage, const std::string& fingerprint,
                         const std::function<std::vector<std::filesystem::path>()>& body) {
        if (manifest.stage_current(stage_name(stage), fingerprint, config.out_dir)) {
            result.skipped.push_back(stage);
            return;
        }
        const auto outputs = body();
        manifest.record_stage(stage_name(stage), fingerprint, outputs, config.out_dir);
        manifest.save(artifacts::manifest(config));
        result.executed.push_back(stage);
    };

    if (stages.count(Stage::data)) {
        run_stage(Stage::data, combine_hashes({config_hash, "data"}),
                  [&] { return run_data_stage(config); });
    }

    if (stages.count(Stage::train)) {
        std::vector<std::string> parts = {config_hash, "train"};
        parts.push_back(require(Stage::train, Stage::data, artifacts::corpus(config)));
        parts.push_back(require(Stage::train, Stage::data, artifacts::vocab(config)));
        run_stage(Stage::train, combine_hashes(parts), [&] { return run_train_stage(config); });
    }

    if (stages.count(Stage::eval)) {
        std::vector<std::string> parts = {config_hash, "eval"};
        parts.push_back(require(Stage::eval, Stage::data, artifacts::vocab(config)));
        for (const auto& spec : config.suites) {
            parts.push_back(require(Stage::eval, Stage::data, artifacts::suite(config, spec.name)));
        }
        for (int64_t k = 0; k < config.n_seeds; ++k) {
            for (int64_t s : expected_checkpoint_steps(config)) {
                parts.push_back(require(Stage::eval, Stage::train,
                                        artifacts::seed_dir(config, k) / checkpoint_filename(s)));
            }
        }
        run_stage(Stage::eval, combine_hashes(parts), [&] { return run_eval_stage(config); });
    }

    if (stages.count(Stage::analyze)) {
        std::vector<std::string> parts = {config_hash, "analyze"};
        parts.push_back(require(Stage::analyze, Stage::eval, artifacts::eval_csv(config)));
        run_stage(Stage::analyze, combine_hashes(parts), [&] { return run_analyze_stage(config); });
    }

    if (stages.count(Stage::report)) {
        std::vector<std::string> parts = {config_hash, "report"};
        parts.push_back(require(Stage::report, Stage::eval, artifacts::eval_csv(config)));
        parts.push_back(
            require(Stage::report, Stage::analyze, artifacts::analysis_json(config)));
        run_stage(Stage::report, combine_hashes(parts), [&] { return run_report_stage(config); });
    }

    return result;
}

} // namespace trajlab
