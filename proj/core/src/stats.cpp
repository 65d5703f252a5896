#include "brainalign/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

#include "brainalign/common.hpp"

namespace brainalign::stats {

namespace {

double sample_mean(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_var(std::span<const double> x, double mean) {
    double acc = 0.0;
    for (double v : x) acc += (v - mean) * (v - mean);
    return acc / static_cast<double>(x.size() - 1);
}

// Average ranks of |d|, scaled by 2 so ties on .5 ranks stay integral.
std::vector<long long> doubled_ranks(const std::vector<double>& abs_d) {
    const std::size_t n = abs_d.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return abs_d[i] < abs_d[j]; });

    std::vector<long long> r2(n, 0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]]) ++j;
        // ranks i+1 .. j+1 averaged; doubled average = (i+1 + j+1)
        const long long avg2 = static_cast<long long>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) r2[order[k]] = avg2;
        i = j + 1;
    }
    return r2;
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double student_t_cdf(double t, double df) {
    boost::math::students_t_distribution<double> dist(df);
    return boost::math::cdf(dist, t);
}

TestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw ContractError("welch_t_test: both samples need >= 2 observations");

    const double ma = sample_mean(a);
    const double mb = sample_mean(b);
    const double va = sample_var(a, ma);
    const double vb = sample_var(b, mb);
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());

    TestResult res;
    res.n_a = a.size();
    res.n_b = b.size();
    res.method = "welch_t";

    const double se2 = va / na + vb / nb;
    if (se2 <= 0.0) {
        // Degenerate convention: equal constants are indistinguishable,
        // different constants are maximally distinguishable.
        res.statistic = 0.0;
        res.p_value = (ma == mb) ? 1.0 : 0.0;
        return res;
    }

    res.statistic = (ma - mb) / std::sqrt(se2);
    const double df =
        se2 * se2 / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    res.p_value = 2.0 * (1.0 - student_t_cdf(std::abs(res.statistic), df));
    res.p_value = std::clamp(res.p_value, 0.0, 1.0);
    return res;
}

TestResult wilcoxon_signed_rank(std::span<const double> diffs) {
    std::vector<double> abs_d;
    std::vector<bool> positive;
    for (double d : diffs) {
        if (d == 0.0) continue;  // standard zero-drop convention
        abs_d.push_back(std::abs(d));
        positive.push_back(d > 0.0);
    }

    TestResult res;
    res.n_a = abs_d.size();
    res.n_b = abs_d.size();

    if (abs_d.empty()) {
        res.method = "wilcoxon_degenerate";
        res.p_value = 1.0;
        return res;
    }
    if (abs_d.size() < 5) throw ContractError("wilcoxon_signed_rank: need >= 5 nonzero differences");

    const std::size_t n = abs_d.size();
    const std::vector<long long> r2 = doubled_ranks(abs_d);
    long long w2 = 0;  // doubled W+ statistic
    long long total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += r2[i];
        if (positive[i]) w2 += r2[i];
    }
    res.statistic = static_cast<double>(w2) / 2.0;

    if (n <= 25) {
        // Exact distribution of the doubled rank sum over all 2^n sign
        // assignments, by dynamic programming over achievable sums.
        std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        long long reach = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const long long r = r2[i];
            for (long long s = std::min<long long>(reach, total2 - r); s >= 0; --s) {
                if (count[static_cast<std::size_t>(s)] > 0.0)
                    count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
            }
            reach = std::min(reach + r, total2);
        }
        const double denom = std::ldexp(1.0, static_cast<int>(n));  // 2^n
        double le = 0.0, ge = 0.0;
        for (long long s = 0; s <= total2; ++s) {
            if (s <= w2) le += count[static_cast<std::size_t>(s)];
            if (s >= w2) ge += count[static_cast<std::size_t>(s)];
        }
        res.method = "wilcoxon_exact";
        res.p_value = std::min(1.0, 2.0 * std::min(le, ge) / denom);
        return res;
    }

    // Normal approximation with continuity correction and tie correction.
    const double w = static_cast<double>(w2) / 2.0;
    const double mean = static_cast<double>(n) * (static_cast<double>(n) + 1.0) / 4.0;
    double var = static_cast<double>(n) * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // Tie correction: subtract sum(t^3 - t)/48 over tie groups.
    {
        std::vector<double> sorted(abs_d);
        std::sort(sorted.begin(), sorted.end());
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            var -= (t * t * t - t) / 48.0;
            i = j + 1;
        }
    }
    res.method = "wilcoxon_normal_approx";
    if (var <= 0.0) {  // all values tied into one group and n large: no information
        res.p_value = 1.0;
        return res;
    }
    const double cc = (w > mean) ? -0.5 : (w < mean ? 0.5 : 0.0);
    const double z = (w - mean + cc) / std::sqrt(var);
    res.p_value = std::clamp(2.0 * (1.0 - normal_cdf(std::abs(z))), 0.0, 1.0);
    return res;
}

std::vector<bool> holm_bonferroni(std::span<const double> p_values, double alpha) {
    const std::size_t m = p_values.size();
    std::vector<bool> reject(m, false);
    if (m == 0) return reject;
    for (double p : p_values) {
        if (p < 0.0 || p > 1.0 || std::isnan(p)) throw ContractError("holm_bonferroni: p-values must lie in [0, 1]");
    }

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });

    for (std::size_t i = 0; i < m; ++i) {
        const double threshold = alpha / static_cast<double>(m - i);
        if (p_values[order[i]] <= threshold) {
            reject[order[i]] = true;
        } else {
            break;  // step-down: first failure blocks everything after it
        }
    }
    return reject;
}

}  // namespace brainalign::stats
