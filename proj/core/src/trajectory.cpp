#include "trajlab/trajectory.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"
#include "trajlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace trajlab {

std::vector<double> EvalMatrix::curve(size_t seed_i, size_t probe_i) const {
    std::vector<double> out(steps.size());
    for (size_t s = 0; s < steps.size(); ++s) {
        out[s] = at(seed_i, s, probe_i);
    }
    return out;
}

std::vector<double> EvalMatrix::stratum_curve(const std::string& stratum, size_t seed_i,
                                              size_t probe_i) const {
    auto it = strata.find(stratum);
    if (it == strata.end()) {
        return {};
    }
    std::vector<double> out(steps.size());
    for (size_t s = 0; s < steps.size(); ++s) {
        const size_t i = index(seed_i, s, probe_i);
        if (!it->second.present[i]) {
            return {};
        }
        out[s] = it->second.accuracy[i];
    }
    return out;
}

EvalMatrix EvalMatrix::from_csv(const std::string& text) {
    struct Row {
        int64_t seed;
        int64_t step;
        std::string probe;
        std::string stratum;
        double accuracy;
    };
    std::vector<Row> rows;
    std::set<int64_t> seed_set;
    std::set<int64_t> step_set;
    std::set<std::string> probe_set;

    auto lines = split(text, '\n');
    if (lines.empty() || trim(lines[0]) != "seed,step,probe_id,stratum,n_pairs,accuracy") {
        throw FormatError("evaluation CSV must start with header "
                          "'seed,step,probe_id,stratum,n_pairs,accuracy'");
    }
    for (size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) {
            continue;
        }
        auto cols = split(lines[i], ',');
        if (cols.size() != 6) {
            throw FormatError("evaluation CSV line " + std::to_string(i + 1) + ": expected 6 columns");
        }
        Row r;
        r.seed = parse_int(cols[0]);
        r.step = parse_int(cols[1]);
        r.probe = cols[2];
        r.stratum = cols[3];
        r.accuracy = parse_double(cols[5]);
        rows.push_back(r);
        if (r.stratum == "all") {
            seed_set.insert(r.seed);
            step_set.insert(r.step);
            probe_set.insert(r.probe);
        }
    }
    if (rows.empty()) {
        throw ValueError("evaluation CSV holds no rows");
    }

    EvalMatrix m;
    m.seeds.assign(seed_set.begin(), seed_set.end());
    m.steps.assign(step_set.begin(), step_set.end());
    m.probes.assign(probe_set.begin(), probe_set.end());
    const size_t total = m.seeds.size() * m.steps.size() * m.probes.size();
    m.accuracy.assign(total, 0.0);
    std::vector<uint8_t> filled(total, 0);

    auto seed_index = [&](int64_t s) {
        return static_cast<size_t>(std::lower_bound(m.seeds.begin(), m.seeds.end(), s) -
                                   m.seeds.begin());
    };
    auto step_index = [&](int64_t s) {
        auto it = std::lower_bound(m.steps.begin(), m.steps.end(), s);
        if (it == m.steps.end() || *it != s) {
            return m.steps.size();
        }
        return static_cast<size_t>(it - m.steps.begin());
    };
    auto probe_index = [&](const std::string& p) {
        auto it = std::lower_bound(m.probes.begin(), m.probes.end(), p);
        if (it == m.probes.end() || *it != p) {
            return m.probes.size();
        }
        return static_cast<size_t>(it - m.probes.begin());
    };

    for (const auto& r : rows) {
        const size_t pi = probe_index(r.probe);
        const size_t sti = step_index(r.step);
        if (pi == m.probes.size() || sti == m.steps.size()) {
            if (r.stratum == "all") {
                throw ValueError("evaluation CSV: unindexed cell for probe '" + r.probe + "'");
            }
            continue; // stratum rows for cells outside the "all" grid
        }
        const size_t i = m.index(seed_index(r.seed), sti, pi);
        if (r.stratum == "all") {
            if (filled[i]) {
                throw ValueError("evaluation CSV: duplicate cell (seed " + std::to_string(r.seed) +
                                 ", step " + std::to_string(r.step) + ", probe '" + r.probe + "')");
            }
            filled[i] = 1;
            m.accuracy[i] = r.accuracy;
        } else {
            auto& arr = m.strata[r.stratum];
            if (arr.accuracy.empty()) {
                arr.accuracy.assign(total, 0.0);
                arr.present.assign(total, 0);
            }
            arr.accuracy[i] = r.accuracy;
            arr.present[i] = 1;
        }
    }
    for (size_t i = 0; i < total; ++i) {
        if (!filled[i]) {
            throw ValueError("evaluation CSV: missing cells; evaluation must be total over "
                             "(seed, step, probe)");
        }
    }
    return m;
}

EvalMatrix EvalMatrix::load(const std::filesystem::path& path) {
    return from_csv(read_text_file(path));
}

std::vector<double> smooth(std::span<const double> curve, int64_t window) {
    if (curve.empty()) {
        throw ValueError("smooth: empty curve");
    }
    if (window < 1) {
        throw ValueError("smooth: window must be at least 1");
    }
    const int64_t n = static_cast<int64_t>(curve.size());
    std::vector<double> out(curve.size());
    const int64_t left = window / 2;
    const int64_t right = (window + 1) / 2 - 1;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t lo = std::max<int64_t>(0, i - left);
        const int64_t hi = std::min<int64_t>(n - 1, i + right);
        double sum = 0.0;
        for (int64_t j = lo; j <= hi; ++j) {
            sum += curve[static_cast<size_t>(j)];
        }
        out[static_cast<size_t>(i)] = sum / static_cast<double>(hi - lo + 1);
    }
    return out;
}

std::optional<int64_t> acquisition_time(std::span<const double> curve,
                                        std::span<const int64_t> steps, int64_t window,
                                        double chance, double acquisition_fraction) {
    if (curve.size() != steps.size()) {
        throw ValueError("acquisition_time: curve and steps must align");
    }
    const auto smoothed = smooth(curve, window);
    const double final_acc = smoothed.back();
    if (final_acc <= chance) {
        return std::nullopt;
    }
    const double threshold = acquisition_fraction * final_acc;
    for (size_t i = 0; i < smoothed.size(); ++i) {
        if (smoothed[i] >= threshold) {
            return steps[i];
        }
    }
    return steps.back(); // the final value itself reaches the threshold
}

std::vector<AcquisitionProfile> acquisition_profiles(const EvalMatrix& m, int64_t window,
                                                     double chance, double acquisition_fraction) {
    std::vector<AcquisitionProfile> profiles;
    profiles.reserve(m.seeds.size() * m.probes.size());
    for (size_t si = 0; si < m.seeds.size(); ++si) {
        std::vector<size_t> above;
        std::vector<double> acq_steps;
        const size_t base = profiles.size();
        for (size_t pi = 0; pi < m.probes.size(); ++pi) {
            AcquisitionProfile prof;
            prof.seed = m.seeds[si];
            prof.probe = m.probes[pi];
            const auto raw = m.curve(si, pi);
            prof.smoothed = smooth(raw, window);
            prof.final_accuracy = prof.smoothed.back();
            prof.above_chance = prof.final_accuracy > chance;
            if (prof.above_chance) {
                prof.acquisition_step =
                    acquisition_time(raw, m.steps, window, chance, acquisition_fraction);
                above.push_back(pi);
                acq_steps.push_back(static_cast<double>(*prof.acquisition_step));
            }
            profiles.push_back(std::move(prof));
        }
        if (above.size() >= 2) {
            const auto ranks = rank_probes(acq_steps);
            for (size_t k = 0; k < above.size(); ++k) {
                profiles[base + above[k]].rank = ranks[k];
            }
        }
    }
    return profiles;
}

std::vector<double> rank_probes(std::span<const double> acquisition_steps) {
    if (acquisition_steps.size() < 2) {
        throw ValueError("rank_probes: need at least 2 rankable probes, got " +
                         std::to_string(acquisition_steps.size()));
    }
    return rankify(acquisition_steps);
}

double mean_pairwise_rank_correlation(const std::vector<std::vector<double>>& rank_vectors) {
    if (rank_vectors.size() < 2) {
        throw ValueError("mean_pairwise_rank_correlation: need at least 2 seeds");
    }
    const size_t k = rank_vectors.front().size();
    if (k < 3) {
        throw ValueError("mean_pairwise_rank_correlation: common probe subset must hold at least "
                         "3 probes, has " +
                         std::to_string(k));
    }
    for (const auto& v : rank_vectors) {
        if (v.size() != k) {
            throw ValueError("mean_pairwise_rank_correlation: rank vectors differ in length");
        }
    }
    double sum = 0.0;
    size_t n_pairs = 0;
    for (size_t i = 0; i < rank_vectors.size(); ++i) {
        for (size_t j = i + 1; j < rank_vectors.size(); ++j) {
            sum += spearman(rank_vectors[i], rank_vectors[j]);
            ++n_pairs;
        }
    }
    return sum / static_cast<double>(n_pairs);
}

PermutationResult permutation_test(const std::vector<std::vector<double>>& rank_vectors,
                                   int64_t n_perm, uint64_t seed) {
    if (n_perm < 1) {
        throw ValueError("permutation_test: n_perm must be at least 1");
    }
    PermutationResult res;
    res.n_perm = n_perm;
    res.observed_R = mean_pairwise_rank_correlation(rank_vectors);

    const size_t n_seeds = rank_vectors.size();
    Rng base(seed);
    int64_t n_at_least = 0;
    std::vector<double> shuffled;
    for (int64_t round = 0; round < n_perm; ++round) {
        Rng rng = base.split(static_cast<uint64_t>(round));
        double sum = 0.0;
        size_t n_pairs = 0;
        for (size_t i = 0; i < n_seeds; ++i) {
            for (size_t j = i + 1; j < n_seeds; ++j) {
                shuffled = rank_vectors[j];
                rng.shuffle(shuffled);
                sum += spearman(rank_vectors[i], shuffled);
                ++n_pairs;
            }
        }
        const double r = sum / static_cast<double>(n_pairs);
        if (r >= res.observed_R) {
            ++n_at_least;
        }
    }
    res.p_value = static_cast<double>(1 + n_at_least) / static_cast<double>(n_perm + 1);
    return res;
}

int TercileGroups::group_of(const std::string& probe) const {
    auto contains = [&](const std::vector<std::string>& v) {
        return std::find(v.begin(), v.end(), probe) != v.end();
    };
    if (contains(early)) {
        return 0;
    }
    if (contains(middle)) {
        return 1;
    }
    if (contains(late)) {
        return 2;
    }
    if (contains(below_chance)) {
        return 3;
    }
    return -1;
}

TercileGroups tercile_groups(const std::vector<std::pair<std::string, double>>& mean_steps,
                             const std::vector<std::string>& below_chance) {
    if (mean_steps.size() < 3) {
        throw ValueError("tercile_groups: need at least 3 above-chance probes, got " +
                         std::to_string(mean_steps.size()));
    }
    std::vector<std::pair<std::string, double>> sorted = mean_steps;
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second < b.second;
        }
        return a.first < b.first;
    });
    const size_t n = sorted.size();
    const size_t base = n / 3;
    const size_t rem = n % 3;
    // Earlier groups absorb the remainder.
    const size_t n_early = base + (rem > 0 ? 1 : 0);
    const size_t n_middle = base + (rem > 1 ? 1 : 0);
    TercileGroups g;
    for (size_t i = 0; i < n; ++i) {
        if (i < n_early) {
            g.early.push_back(sorted[i].first);
        } else if (i < n_early + n_middle) {
            g.middle.push_back(sorted[i].first);
        } else {
            g.late.push_back(sorted[i].first);
        }
    }
    g.below_chance = below_chance;
    return g;
}

EarlyDerivative early_derivative_fraction(const EvalMatrix& m, const TercileGroups& groups,
                                          int64_t window, int64_t k_checkpoints) {
    if (static_cast<int64_t>(m.steps.size()) < k_checkpoints + 1) {
        throw ValueError("early_derivative_fraction: need at least k+1 checkpoints");
    }
    EarlyDerivative out;
    auto derivative_of = [&](const std::string& probe) {
        const size_t pi = static_cast<size_t>(
            std::find(m.probes.begin(), m.probes.end(), probe) - m.probes.begin());
        std::vector<double> mean_curve(m.steps.size(), 0.0);
        for (size_t si = 0; si < m.seeds.size(); ++si) {
            const auto c = m.curve(si, pi);
            for (size_t t = 0; t < c.size(); ++t) {
                mean_curve[t] += c[t];
            }
        }
        for (auto& v : mean_curve) {
            v /= static_cast<double>(m.seeds.size());
        }
        const auto s = smooth(mean_curve, window);
        return s[static_cast<size_t>(k_checkpoints)] - s[0];
    };

    auto fraction_of = [&](const std::vector<std::string>& probes) {
        if (probes.empty()) {
            return 0.0;
        }
        int64_t positive = 0;
        for (const auto& p : probes) {
            const double d = derivative_of(p);
            out.derivative_per_probe[p] = d;
            positive += d > 0.0 ? 1 : 0;
        }
        return static_cast<double>(positive) / static_cast<double>(probes.size());
    };

    out.fraction_early = fraction_of(groups.early);
    out.fraction_middle = fraction_of(groups.middle);
    out.fraction_late = fraction_of(groups.late);

    int64_t positive = 0;
    int64_t total = 0;
    for (const auto& probes : {groups.early, groups.middle, groups.late}) {
        for (const auto& p : probes) {
            positive += out.derivative_per_probe[p] > 0.0 ? 1 : 0;
            ++total;
        }
    }
    out.fraction_above_chance =
        total > 0 ? static_cast<double>(positive) / static_cast<double>(total) : 0.0;
    return out;
}

double learning_rate_slope(std::span<const double> smoothed, std::span<const int64_t> steps,
                           std::optional<int64_t> acquisition_step) {
    if (smoothed.size() != steps.size() || smoothed.empty()) {
        throw ValueError("learning_rate_slope: curve and steps must align");
    }
    size_t end = smoothed.size(); // exclusive
    if (acquisition_step) {
        auto it = std::lower_bound(steps.begin(), steps.end(), *acquisition_step);
        end = static_cast<size_t>(it - steps.begin()) + 1;
        end = std::min(end, smoothed.size());
    }
    end = std::max<size_t>(end, 2); // a slope needs two points
    double mx = 0, my = 0;
    for (size_t i = 0; i < end; ++i) {
        mx += static_cast<double>(steps[i]);
        my += smoothed[i];
    }
    mx /= static_cast<double>(end);
    my /= static_cast<double>(end);
    double sxy = 0, sxx = 0;
    for (size_t i = 0; i < end; ++i) {
        const double dx = static_cast<double>(steps[i]) - mx;
        sxy += dx * (smoothed[i] - my);
        sxx += dx * dx;
    }
    return sxx == 0.0 ? 0.0 : sxy / sxx;
}

BiasCurves bias_curves(const EvalMatrix& m, const std::string& probe, int64_t window) {
    static const char* kStrata[4] = {"congruent_singular", "congruent_plural",
                                     "incongruent_singular", "incongruent_plural"};
    auto it = std::find(m.probes.begin(), m.probes.end(), probe);
    if (it == m.probes.end()) {
        throw ValueError("bias_curves: unknown probe '" + probe + "'");
    }
    const size_t pi = static_cast<size_t>(it - m.probes.begin());

    BiasCurves out;
    for (const char* stratum : kStrata) {
        std::vector<double> mean_curve(m.steps.size(), 0.0);
        bool complete = true;
        for (size_t si = 0; si < m.seeds.size() && complete; ++si) {
            const auto c = m.stratum_curve(stratum, si, pi);
            if (c.empty()) {
                complete = false;
                break;
            }
            for (size_t t = 0; t < c.size(); ++t) {
                mean_curve[t] += c[t];
            }
        }
        if (!complete) {
            out.missing_strata.emplace_back(stratum);
            continue;
        }
        for (auto& v : mean_curve) {
            v /= static_cast<double>(m.seeds.size());
        }
        out.curves[stratum] = smooth(mean_curve, window);
    }
    return out;
}

} // namespace trajlab
