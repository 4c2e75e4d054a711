#include "trajlab/childcmp.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"

#include <algorithm>
#include <cmath>

namespace trajlab {

const std::vector<ChildrenStage>& children_stage_table() {
    static const std::vector<ChildrenStage> table = {
        {1, {"Subject-Verb Simple", "Subject-Verb Unaccusative", "Verb-Subject Unaccusative"}},
        {2, {"Root WH-Argument", "WH-Adjunct Excluding Why", "Preposed Adverb", "Root y/n"}},
        {3, {"Why", "Relative Clause", "Topicalisation", "Embedding"}},
    };
    return table;
}

void StageMap::validate() const {
    if (stages.empty()) {
        throw ValueError("stage map holds no stages");
    }
    for (size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].probe_id.empty() || stages[i].child_label.empty()) {
            throw ValueError("stage map entry " + std::to_string(i + 1) +
                             " is missing a label or probe id");
        }
        if (i > 0 && stages[i].stage <= stages[i - 1].stage) {
            throw ValueError("stage indices must be strictly increasing");
        }
    }
    if (learned_threshold <= 0.0 || learned_threshold >= 1.0) {
        throw ValueError("learned threshold must lie in (0, 1)");
    }
}

StageMap StageMap::from_config(const ConfigFile& cfg) {
    StageMap map;
    map.learned_threshold = cfg.get_double("stagemap", "threshold", 0.55);
    const std::string rule = cfg.get_or("stagemap", "rule", "threshold_crossing");
    if (rule == "threshold_crossing") {
        map.rule = Rule::threshold_crossing;
    } else if (rule == "acquisition_time") {
        map.rule = Rule::acquisition_time;
    } else {
        throw ConfigError("stage map rule must be 'threshold_crossing' or 'acquisition_time', got '" +
                          rule + "'");
    }
    for (const auto& line : cfg.get_all("stagemap", "stage")) {
        auto parts = split(line, '|');
        if (parts.size() != 3) {
            throw ConfigError("stage entry must be '<index> | <child label> | <probe_id>', got '" +
                              line + "'");
        }
        StageEntry e;
        e.stage = static_cast<int>(parse_int(parts[0]));
        e.child_label = std::string(trim(parts[1]));
        e.probe_id = std::string(trim(parts[2]));
        map.stages.push_back(std::move(e));
    }
    map.validate();
    return map;
}

StageMap StageMap::load(const std::filesystem::path& path) {
    return from_config(ConfigFile::load(path));
}

double order_chance_probability(int64_t n_stages, int64_t n_matching_seeds) {
    double factorial = 1.0;
    for (int64_t i = 2; i <= n_stages; ++i) {
        factorial *= static_cast<double>(i);
    }
    return std::pow(1.0 / factorial, static_cast<double>(n_matching_seeds));
}

namespace {

// First step whose raw accuracy strictly exceeds the threshold.
std::optional<int64_t> first_crossing(const std::vector<double>& curve,
                                      const std::vector<int64_t>& steps, double threshold) {
    for (size_t i = 0; i < curve.size(); ++i) {
        if (curve[i] > threshold) {
            return steps[i];
        }
    }
    return std::nullopt;
}

} // namespace

StageComparison compare_orders(const EvalMatrix& m, const StageMap& map, int64_t window) {
    map.validate();
    std::vector<size_t> probe_idx;
    for (const auto& e : map.stages) {
        auto it = std::find(m.probes.begin(), m.probes.end(), e.probe_id);
        if (it == m.probes.end()) {
            throw ValueError("stage map probe '" + e.probe_id + "' was never evaluated");
        }
        probe_idx.push_back(static_cast<size_t>(it - m.probes.begin()));
    }

    StageComparison cmp;
    cmp.n_stages = static_cast<int64_t>(map.stages.size());
    for (size_t si = 0; si < m.seeds.size(); ++si) {
        SeedOrderResult r;
        r.seed = m.seeds[si];
        r.matches = true;
        for (size_t k = 0; k < probe_idx.size(); ++k) {
            const auto curve = m.curve(si, probe_idx[k]);
            std::optional<int64_t> step;
            if (map.rule == StageMap::Rule::threshold_crossing) {
                step = first_crossing(curve, m.steps, map.learned_threshold);
            } else {
                step = acquisition_time(curve, m.steps, window);
            }
            r.stage_steps.push_back(step);
            if (!step) {
                r.matches = false;
                if (r.reason.empty()) {
                    r.reason = "probe '" + map.stages[k].probe_id + "' never acquired";
                }
            }
        }
        if (r.matches) {
            for (size_t k = 1; k < r.stage_steps.size(); ++k) {
                if (*r.stage_steps[k] <= *r.stage_steps[k - 1]) {
                    r.matches = false;
                    r.reason = "stage " + std::to_string(map.stages[k].stage) +
                               " acquired no later than stage " +
                               std::to_string(map.stages[k - 1].stage);
                    break;
                }
            }
        }
        cmp.n_matching_seeds += r.matches ? 1 : 0;
        cmp.per_seed.push_back(std::move(r));
    }
    cmp.chance_probability = order_chance_probability(cmp.n_stages, cmp.n_matching_seeds);
    return cmp;
}

LearnedGrid learned_matrix(const EvalMatrix& m, const StageMap& map,
                           const std::vector<int64_t>& at_steps) {
    map.validate();
    std::vector<size_t> probe_idx;
    for (const auto& e : map.stages) {
        auto it = std::find(m.probes.begin(), m.probes.end(), e.probe_id);
        if (it == m.probes.end()) {
            throw ValueError("stage map probe '" + e.probe_id + "' was never evaluated");
        }
        probe_idx.push_back(static_cast<size_t>(it - m.probes.begin()));
    }
    std::vector<size_t> step_idx;
    for (int64_t s : at_steps) {
        auto it = std::lower_bound(m.steps.begin(), m.steps.end(), s);
        if (it == m.steps.end() || *it != s) {
            throw ValueError("learned_matrix: step " + std::to_string(s) +
                             " is not a checkpoint step");
        }
        step_idx.push_back(static_cast<size_t>(it - m.steps.begin()));
    }

    LearnedGrid grid;
    for (const auto& e : map.stages) {
        grid.stage_labels.push_back(e.child_label);
    }
    const size_t k = map.stages.size();

    // Children pseudo-agents: at developmental stage j, stages 1..j are
    // present in production.
    for (size_t j = 1; j <= k; ++j) {
        grid.agents.push_back("children@stage" + std::to_string(map.stages[j - 1].stage));
        for (size_t s = 0; s < k; ++s) {
            grid.cells.push_back(s < j ? 1 : 0);
        }
    }
    for (size_t si = 0; si < m.seeds.size(); ++si) {
        for (size_t ti = 0; ti < step_idx.size(); ++ti) {
            grid.agents.push_back("seed" + std::to_string(m.seeds[si]) + "@step" +
                                  std::to_string(at_steps[ti]));
            for (size_t s = 0; s < k; ++s) {
                const double acc = m.at(si, step_idx[ti], probe_idx[s]);
                grid.cells.push_back(acc > map.learned_threshold ? 1 : 0);
            }
        }
    }
    return grid;
}

} // namespace trajlab
