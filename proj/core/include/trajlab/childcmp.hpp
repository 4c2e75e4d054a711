#pragma once

#include "trajlab/config.hpp"
#include "trajlab/trajectory.hpp"

#include <optional>
#include <string>
#include <vector>

namespace trajlab {

// The three-stage organization of children's syntactic development, with
// the phenomena observed per stage. Bundled as static versioned data; only
// stage-level aggregates enter any computation.
struct ChildrenStage {
    int stage;
    std::vector<std::string> phenomena;
};
const std::vector<ChildrenStage>& children_stage_table();

struct StageEntry {
    int stage = 0;
    std::string child_label;
    std::string probe_id;
};

struct StageMap {
    std::vector<StageEntry> stages; // strictly increasing stage indices
    double learned_threshold = 0.55;
    // How "acquired" is decided for the order check: first strict crossing
    // of learned_threshold on the raw curve (default), or the smoothed
    // 90%-of-final acquisition step.
    enum class Rule { threshold_crossing, acquisition_time };
    Rule rule = Rule::threshold_crossing;

    void validate() const;
    static StageMap from_config(const ConfigFile& cfg);
    static StageMap load(const std::filesystem::path& path);
};

struct SeedOrderResult {
    int64_t seed = 0;
    bool matches = false;
    // Acquisition step per stage, in stage order; absent when the probe
    // never crosses.
    std::vector<std::optional<int64_t>> stage_steps;
    std::string reason; // filled when matches == false
};

struct StageComparison {
    std::vector<SeedOrderResult> per_seed;
    int64_t n_matching_seeds = 0;
    int64_t n_stages = 0;
    double chance_probability = 1.0; // (1 / k!)^n_matching_seeds
};

double order_chance_probability(int64_t n_stages, int64_t n_matching_seeds);

// Checks, per seed, whether the mapped probes are acquired in strictly
// increasing stage order. A probe that never crosses makes the seed
// non-matching with a recorded reason. window only affects the
// acquisition_time rule.
StageComparison compare_orders(const EvalMatrix& m, const StageMap& map, int64_t window = 6);

struct LearnedGrid {
    std::vector<std::string> agents;       // children pseudo-agents, then models
    std::vector<std::string> stage_labels; // child phenomenon labels
    std::vector<uint8_t> cells;            // row-major [agent][stage]

    bool learned(size_t agent, size_t stage) const {
        return cells[agent * stage_labels.size() + stage] != 0;
    }
};

// Learned/not-learned grid: one model agent per (seed, step in at_steps),
// learned iff accuracy > learned_threshold at that step (strict). Children
// rows are constants: the stage-j pseudo-agent has learned exactly the
// phenomena of stages 1..j.
LearnedGrid learned_matrix(const EvalMatrix& m, const StageMap& map,
                           const std::vector<int64_t>& at_steps);

} // namespace trajlab
