#pragma once

#include <span>
#include <string>
#include <vector>

namespace brainalign::stats {

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;  // two-sided, in [0, 1]
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    std::string method;
};

// Two-sample t-test with Welch-Satterthwaite degrees of freedom, two-sided.
// Both samples need >= 2 observations. When both samples have zero variance
// the result is degenerate: p = 1 if the means are equal, p = 0 otherwise.
TestResult welch_t_test(std::span<const double> a, std::span<const double> b);

// Wilcoxon signed-rank test on paired differences, two-sided. Zero
// differences are dropped before ranking; at least 5 nonzero differences are
// required unless every difference is zero (degenerate p = 1). Uses the exact
// rank-sum distribution for n <= 25 and a normal approximation with
// continuity and tie correction above that.
TestResult wilcoxon_signed_rank(std::span<const double> diffs);

// Holm-Bonferroni step-down correction. Returns rejection flags in the input
// ordering. Empty input yields empty output.
std::vector<bool> holm_bonferroni(std::span<const double> p_values, double alpha);

// Student's t CDF, P(T_df <= t). Exposed for reuse by the win-rate harness.
double student_t_cdf(double t, double df);

// Standard normal CDF.
double normal_cdf(double z);

}  // namespace brainalign::stats
