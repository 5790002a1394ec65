// SPDX-License-Identifier: Apache-2.0
#pragma once

// Regularized incomplete gamma function and the chi-square
// distribution built on it. Series expansion below the a+1 crossover,
// Lentz continued fraction above it; both iterate to double precision.

#include <cmath>
#include <string>

#include "regnet/errors.hpp"

namespace regnet::special {

namespace detail {

inline constexpr int kMaxIter = 500;
inline constexpr double kEps = 1e-15;
inline constexpr double kTiny = 1e-300;

// Lower series: P(a,x) = e^{-x + a ln x - lnGamma(a)} sum_n x^n / (a)_{n+1}.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double term = sum;
    for (int i = 0; i < kMaxIter; ++i) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * kEps) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper continued fraction: Q(a,x) = e^{-x + a ln x - lnGamma(a)} * cf.
inline double gamma_q_cf(double a, double x) {
    double b = x + 1.0 - a;
    double c = 1.0 / kTiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= kMaxIter; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEps) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
inline double gamma_p(double a, double x) {
    if (!(a > 0.0)) throw DomainError("gamma_p requires a > 0, got " + std::to_string(a));
    if (x < 0.0) throw DomainError("gamma_p requires x >= 0, got " + std::to_string(x));
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    return 1.0 - detail::gamma_q_cf(a, x);
}

// CDF of the chi-square distribution with d degrees of freedom.
inline double chi_square_cdf(std::size_t d, double x) {
    if (d < 1) throw DomainError("chi_square_cdf requires d >= 1");
    if (x <= 0.0) return 0.0;
    return gamma_p(static_cast<double>(d) / 2.0, x / 2.0);
}

// Quantile of the chi-square distribution: smallest x with
// CDF(x) >= p, found by bisection to an interval width of 1e-10.
inline double chi_square_quantile(std::size_t d, double p) {
    if (d < 1) throw DomainError("chi_square_quantile requires d >= 1");
    if (!(p >= 0.0 && p < 1.0)) {
        throw DomainError("chi_square_quantile requires 0 <= p < 1, got " + std::to_string(p));
    }
    if (p == 0.0) return 0.0;
    double lo = 0.0;
    double hi = 1.0;
    while (chi_square_cdf(d, hi) < p) hi *= 2.0;
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (chi_square_cdf(d, mid) < p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace regnet::special
