#include "trajlab/stats.hpp"

#include "trajlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace trajlab {

std::vector<double> rankify(std::span<const double> values) {
    const size_t n = values.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) {
            ++j;
        }
        // positions i..j (0-based) share the average 1-based rank
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ValueError("pearson: length mismatch");
    }
    if (a.size() < 2) {
        throw ValueError("pearson: need at least 2 observations");
    }
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) {
        return 0.0;
    }
    return sab / std::sqrt(saa * sbb);
}

double spearman(std::span<const double> a, std::span<const double> b) {
    const auto ra = rankify(a);
    const auto rb = rankify(b);
    return pearson(ra, rb);
}

double log_gamma(double x) {
    // Lanczos approximation, g = 7, 9 coefficients.
    static const double coeffs[9] = {
        0.99999999999980993,  676.5203681218851,   -1259.1392167224028,
        771.32342877765313,   -176.61502916214059, 12.507343278686905,
        -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
    if (x < 0.5) {
        // reflection
        return std::log(M_PI / std::sin(M_PI * x)) - log_gamma(1.0 - x);
    }
    x -= 1.0;
    double a = coeffs[0];
    const double t = x + 7.5;
    for (int i = 1; i < 9; ++i) {
        a += coeffs[i] / (x + static_cast<double>(i));
    }
    return 0.5 * std::log(2.0 * M_PI) + (x + 0.5) * std::log(t) - t + std::log(a);
}

namespace {

double beta_cont_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) {
        d = kTiny;
    }
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) {
            break;
        }
    }
    return h;
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) {
        throw ValueError("incomplete_beta: a and b must be positive");
    }
    if (x < 0.0 || x > 1.0) {
        throw ValueError("incomplete_beta: x must lie in [0, 1]");
    }
    if (x == 0.0) {
        return 0.0;
    }
    if (x == 1.0) {
        return 1.0;
    }
    const double ln_front =
        log_gamma(a + b) - log_gamma(a) - log_gamma(b) + a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_cont_fraction(a, b, x) / a;
    }
    return 1.0 - front * beta_cont_fraction(b, a, 1.0 - x) / b;
}

double f_upper_tail(double f, double d1, double d2) {
    if (d1 <= 0.0 || d2 <= 0.0) {
        throw ValueError("f_upper_tail: degrees of freedom must be positive");
    }
    if (f <= 0.0) {
        return 1.0;
    }
    if (std::isinf(f)) {
        return 0.0;
    }
    return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) {
        throw ValueError("one_way_anova: need at least 2 groups");
    }
    int64_t n_total = 0;
    for (const auto& g : groups) {
        if (g.size() < 2) {
            throw ValueError("one_way_anova: every group needs at least 2 observations");
        }
        n_total += static_cast<int64_t>(g.size());
    }

    double grand = 0.0;
    for (const auto& g : groups) {
        for (double v : g) {
            grand += v;
        }
    }
    grand /= static_cast<double>(n_total);

    double ss_between = 0.0;
    double ss_within = 0.0;
    for (const auto& g : groups) {
        double mean = 0.0;
        for (double v : g) {
            mean += v;
        }
        mean /= static_cast<double>(g.size());
        ss_between += static_cast<double>(g.size()) * (mean - grand) * (mean - grand);
        for (double v : g) {
            ss_within += (v - mean) * (v - mean);
        }
    }

    AnovaResult res;
    res.df_between = static_cast<int64_t>(groups.size()) - 1;
    res.df_within = n_total - static_cast<int64_t>(groups.size());
    if (ss_within == 0.0) {
        res.degenerate = true;
        if (ss_between == 0.0) {
            res.F = 0.0;
            res.p = 1.0;
        } else {
            res.F = std::numeric_limits<double>::infinity();
            res.p = 0.0;
        }
        return res;
    }
    const double ms_between = ss_between / static_cast<double>(res.df_between);
    const double ms_within = ss_within / static_cast<double>(res.df_within);
    res.F = ms_between / ms_within;
    res.p = f_upper_tail(res.F, static_cast<double>(res.df_between),
                         static_cast<double>(res.df_within));
    return res;
}

} // namespace trajlab
