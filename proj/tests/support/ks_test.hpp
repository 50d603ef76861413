#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace a2nl::testing {

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t n = a.size(), m = b.size();
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < n && j < m) {
        const double x = std::min(a[i], b[j]);
        while (i < n && a[i] <= x) ++i;
        while (j < m && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
    }
    return d;
}

// Asymptotic two-sided p-value (Kolmogorov distribution with the usual
// small-sample correction).
inline double ks_p_value(double d, std::size_t n, std::size_t m) {
    const double en = std::sqrt(static_cast<double>(n) * m / (n + m));
    const double lambda = (en + 0.12 + 0.11 / en) * d;
    double p = 0.0;
    for (int k = 1; k <= 100; ++k) {
        p += 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    }
    return std::min(1.0, std::max(0.0, p));
}

inline double ks_two_sample_p(const std::vector<double>& a, const std::vector<double>& b) {
    return ks_p_value(ks_statistic(a, b), a.size(), b.size());
}

}  // namespace a2nl::testing
