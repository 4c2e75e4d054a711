#pragma once

#include "trajlab/childcmp.hpp"
#include "trajlab/config.hpp"
#include "trajlab/model.hpp"
#include "trajlab/probes.hpp"
#include "trajlab/trajectory.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace trajlab {

enum class Stage { data, train, eval, analyze, report };

std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);
std::set<Stage> all_stages();

struct SuiteSpec {
    std::string name;
    // Either a generation recipe...
    std::string phenomenon;
    int64_t n_pairs = 0;
    double holdout = 0.0;
    // ...or a ready JSONL file.
    std::filesystem::path path;

    bool generated() const { return path.empty(); }
};

struct AnalysisSettings {
    int64_t window = 6;
    int64_t k_checkpoints = 3;
    int64_t n_perm = 1000;
    uint64_t perm_seed = 0;
    double chance = 0.5;
    double acquisition_fraction = 0.9;
    double learned_threshold = 0.55;
};

// One structured config drives the whole experiment. Relative paths are
// resolved against the config file's directory.
struct RunConfig {
    // corpus supply: a grammar to sample from, or a raw one-document-per-line file
    std::filesystem::path grammar_path;
    std::filesystem::path corpus_path;
    int64_t n_sentences = 0;
    double corpus_holdout = 0.0; // lexicon tail withheld from training text

    int64_t vocab_target = 320;
    std::string punctuation = std::string(Vocabulary::kDefaultPunctuation);
    int64_t bpe_train_lines = 0; // 0 = whole corpus

    ModelConfig model; // vocab_size is filled from the trained tokenizer
    OptimizerSettings optimizer;
    int64_t n_seeds = 1;
    uint64_t base_seed = 1;
    int64_t max_steps = 1000;
    int64_t checkpoint_every = 100;

    std::vector<SuiteSpec> suites;
    int64_t eval_batch = 300;

    AnalysisSettings analysis;
    std::optional<StageMap> stage_map;

    std::filesystem::path out_dir = "out";
    int jobs = 1;

    void validate() const;
    static RunConfig from_config(const ConfigFile& cfg, const std::filesystem::path& base_dir);
    static RunConfig load(const std::filesystem::path& path);

    // Stable fingerprint of the experiment definition (file contents
    // included for referenced grammar/corpus/suite inputs).
    std::string content_hash() const;
};

struct PipelineResult {
    std::vector<Stage> executed; // stages that actually ran (not skipped)
    std::vector<Stage> skipped;  // stages skipped because outputs are current
    std::filesystem::path out_dir;
};

// Runs the requested stages in canonical order. Each stage is idempotent:
// when the manifest records the same input fingerprint and every output
// still matches its recorded hash, the stage is skipped without rewriting
// anything. Missing prerequisite artifacts raise ValueError naming the
// stage that must run first.
PipelineResult run_pipeline(const RunConfig& config, const std::set<Stage>& stages);

// Artifact locations inside the output directory.
namespace artifacts {
std::filesystem::path corpus(const RunConfig& c);
std::filesystem::path vocab(const RunConfig& c);
std::filesystem::path suite(const RunConfig& c, const std::string& name);
std::filesystem::path seed_dir(const RunConfig& c, int64_t seed_index);
std::filesystem::path eval_csv(const RunConfig& c);
std::filesystem::path analysis_dir(const RunConfig& c);
std::filesystem::path analysis_json(const RunConfig& c);
std::filesystem::path report_dir(const RunConfig& c);
std::filesystem::path manifest(const RunConfig& c);
} // namespace artifacts

} // namespace trajlab
