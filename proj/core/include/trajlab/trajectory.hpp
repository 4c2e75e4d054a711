#pragma once

#include "trajlab/stats.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace trajlab {

// Accuracy indexed by (seed, checkpoint step, probe), plus parallel arrays
// for whichever strata the evaluation emitted. The "all" stratum must be
// total; others may be defined for a subset of probes.
class EvalMatrix {
  public:
    struct StratumArray {
        std::vector<double> accuracy;  // dense [seed][step][probe]
        std::vector<uint8_t> present;
    };

    std::vector<int64_t> seeds;
    std::vector<int64_t> steps;       // strictly increasing
    std::vector<std::string> probes;
    std::vector<double> accuracy;     // the "all" stratum, dense
    std::map<std::string, StratumArray> strata;

    size_t index(size_t seed_i, size_t step_i, size_t probe_i) const {
        return (seed_i * steps.size() + step_i) * probes.size() + probe_i;
    }
    double at(size_t seed_i, size_t step_i, size_t probe_i) const {
        return accuracy[index(seed_i, step_i, probe_i)];
    }
    // Accuracy curve over steps for one (seed, probe).
    std::vector<double> curve(size_t seed_i, size_t probe_i) const;
    std::vector<double> stratum_curve(const std::string& stratum, size_t seed_i,
                                      size_t probe_i) const; // empty when absent

    // Parses the evaluation CSV (seed,step,probe_id,stratum,n_pairs,accuracy).
    // Throws FormatError for malformed rows and ValueError when the "all"
    // stratum has missing or duplicate cells.
    static EvalMatrix from_csv(const std::string& text);
    static EvalMatrix load(const std::filesystem::path& path);
};

// Centered moving average with a window that shrinks at the boundaries: the
// window at index i covers [i - floor(w/2), i + ceil(w/2) - 1] clipped to
// the curve. Window 1 is the identity. Throws ValueError on empty input or
// window < 1.
std::vector<double> smooth(std::span<const double> curve, int64_t window);

// Earliest step whose smoothed accuracy reaches 90% (acquisition_fraction)
// of the final smoothed accuracy; absent when the final value is at or
// below chance.
std::optional<int64_t> acquisition_time(std::span<const double> curve,
                                        std::span<const int64_t> steps, int64_t window = 6,
                                        double chance = 0.5, double acquisition_fraction = 0.9);

struct AcquisitionProfile {
    int64_t seed = 0;
    std::string probe;
    std::vector<double> smoothed;
    double final_accuracy = 0.0;
    bool above_chance = false;
    std::optional<int64_t> acquisition_step;
    std::optional<double> rank;
};

// One profile per (seed, probe); ranks are filled per seed over that seed's
// above-chance probes (average ties), absent otherwise.
std::vector<AcquisitionProfile> acquisition_profiles(const EvalMatrix& m, int64_t window = 6,
                                                     double chance = 0.5,
                                                     double acquisition_fraction = 0.9);

// Ranks of acquisition steps (average ties). Throws ValueError for fewer
// than 2 entries.
std::vector<double> rank_probes(std::span<const double> acquisition_steps);

// Mean pairwise Spearman correlation over all unordered pairs of rank
// vectors. All vectors must share the same length >= 3.
double mean_pairwise_rank_correlation(const std::vector<std::vector<double>>& rank_vectors);

struct PermutationResult {
    double observed_R = 0.0;
    double p_value = 1.0;
    int64_t n_perm = 0;
};

// Permutation significance of the mean pairwise rank correlation: each
// round shuffles one side of every pair independently and recomputes the
// mean; p = (1 + #{R_perm >= R_obs}) / (n_perm + 1).
PermutationResult permutation_test(const std::vector<std::vector<double>>& rank_vectors,
                                   int64_t n_perm = 1000, uint64_t seed = 0);

struct TercileGroups {
    // Probe names ordered by ascending mean acquisition step inside each
    // group; sizes differ by at most one with earlier groups taking the
    // remainder.
    std::vector<std::string> early;
    std::vector<std::string> middle;
    std::vector<std::string> late;
    std::vector<std::string> below_chance;

    int group_of(const std::string& probe) const; // 0/1/2, 3 = below chance, -1 unknown
};

TercileGroups tercile_groups(const std::vector<std::pair<std::string, double>>& mean_steps,
                             const std::vector<std::string>& below_chance);

struct EarlyDerivative {
    double fraction_early = 0.0;
    double fraction_middle = 0.0;
    double fraction_late = 0.0;
    double fraction_above_chance = 0.0; // across all above-chance probes
    std::map<std::string, double> derivative_per_probe;
};

// Positive-derivative test over the first k checkpoints of the seed-mean
// smoothed curve of every probe.
EarlyDerivative early_derivative_fraction(const EvalMatrix& m, const TercileGroups& groups,
                                          int64_t window = 6, int64_t k_checkpoints = 3);

// Least-squares slope of the smoothed accuracy against step over the
// pre-acquisition segment (curve start through the acquisition index; the
// whole curve when never acquired). Used as the per-(probe, seed) learning
// rate for the tercile ANOVA.
double learning_rate_slope(std::span<const double> smoothed, std::span<const int64_t> steps,
                           std::optional<int64_t> acquisition_step);

struct BiasCurves {
    // stratum -> smoothed seed-mean accuracy trajectory
    std::map<std::string, std::vector<double>> curves;
    std::vector<std::string> missing_strata; // warned, not fatal
};

// Smoothed trajectories of the four congruency x verb-number strata for one
// probe; strata absent from the matrix are reported in missing_strata.
BiasCurves bias_curves(const EvalMatrix& m, const std::string& probe, int64_t window = 6);

} // namespace trajlab
