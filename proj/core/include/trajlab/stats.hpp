#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace trajlab {

// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> rankify(std::span<const double> values);

// Pearson correlation; 0.0 when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

// Spearman rank correlation with average-rank ties.
double spearman(std::span<const double> a, std::span<const double> b);

double log_gamma(double x);

// Regularized incomplete beta I_x(a, b) via the continued fraction.
double incomplete_beta(double a, double b, double x);

// Upper tail of the F distribution: P(F' >= f | d1, d2).
double f_upper_tail(double f, double d1, double d2);

struct AnovaResult {
    double F = 0.0;
    double p = 1.0;
    int64_t df_between = 0;
    int64_t df_within = 0;
    bool degenerate = false; // within-group variance collapsed to zero
};

// Classical one-way ANOVA over >= 2 groups of >= 2 observations each.
// Zero within-group variance with any between-group spread reports
// F = +infinity, p = 0, degenerate; all observations equal reports
// F = 0, p = 1, degenerate.
AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups);

} // namespace trajlab
