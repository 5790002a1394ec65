// SPDX-License-Identifier: Apache-2.0
#pragma once

// Verification metrics over decision statistics.
//
// Convention: lower statistic = more authorized-like; a sample is
// accepted iff its statistic is <= tau (boundary inclusive). FAR(tau)
// is the fraction of unauthorized statistics <= tau, FRR(tau) the
// fraction of authorized statistics > tau, GAR = 1 - FRR.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "regnet/errors.hpp"

namespace regnet::metrics {

struct ScoreSet {
    std::vector<double> authorized;
    std::vector<double> unauthorized;
};

struct RocPoint {
    double tau;
    double far;
    double frr;
    double gar;
};

struct RocCurve {
    std::vector<RocPoint> points;
};

struct EerResult {
    double eer;
    double tau;
};

struct HistBin {
    double lo;
    double hi;
    std::size_t count;
};

namespace detail {

inline void check_scores(const ScoreSet& s, const char* op) {
    if (s.authorized.empty()) {
        throw InsufficientDataError(std::string(op) + ": no authorized scores");
    }
    if (s.unauthorized.empty()) {
        throw InsufficientDataError(std::string(op) + ": no unauthorized scores");
    }
    for (double v : s.authorized) {
        if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite authorized score");
    }
    for (double v : s.unauthorized) {
        if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite unauthorized score");
    }
}

// Candidate thresholds: midpoints between adjacent distinct pooled
// scores plus the two sentinel extremes. Rates are constant between
// consecutive scores, so these candidates reach every achievable
// operating point.
inline std::vector<double> candidate_taus(const ScoreSet& s) {
    std::vector<double> pooled;
    pooled.reserve(s.authorized.size() + s.unauthorized.size());
    pooled.insert(pooled.end(), s.authorized.begin(), s.authorized.end());
    pooled.insert(pooled.end(), s.unauthorized.begin(), s.unauthorized.end());
    std::sort(pooled.begin(), pooled.end());
    pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

    std::vector<double> taus;
    taus.push_back(-std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i + 1 < pooled.size(); ++i) {
        taus.push_back(0.5 * (pooled[i] + pooled[i + 1]));
    }
    taus.push_back(std::numeric_limits<double>::infinity());
    return taus;
}

inline double frac_leq(const std::vector<double>& sorted, double tau) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), tau);
    return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

}  // namespace detail

// Empirical ROC staircase at every distinct-score midpoint plus the
// sentinel extremes: the first point has far 0, gar 0 and the last has
// far 1, gar 1; far and gar are non-decreasing in tau.
inline RocCurve roc(const ScoreSet& s) {
    detail::check_scores(s, "roc");
    std::vector<double> auth = s.authorized;
    std::vector<double> unauth = s.unauthorized;
    std::sort(auth.begin(), auth.end());
    std::sort(unauth.begin(), unauth.end());

    RocCurve curve;
    for (double tau : detail::candidate_taus(s)) {
        double far, frr;
        if (std::isinf(tau)) {
            far = tau < 0 ? 0.0 : 1.0;
            frr = tau < 0 ? 1.0 : 0.0;
        } else {
            far = detail::frac_leq(unauth, tau);
            frr = 1.0 - detail::frac_leq(auth, tau);
        }
        curve.points.push_back(RocPoint{tau, far, frr, 1.0 - frr});
    }
    return curve;
}

// Equal error rate from the convex hull of the empirical ROC. The
// staircase only realizes a discrete set of operating points, so the
// crossing of FAR and FRR is taken on the hull, linearly interpolating
// both rates between the two hull vertices that straddle FAR = FRR;
// this reaches below-resolution rates and never exceeds 0.5.
inline EerResult eer(const ScoreSet& s) {
    const RocCurve curve = roc(s);

    // Upper hull over (far, gar); points arrive sorted by tau, hence by
    // (far, gar) lexicographically.
    std::vector<const RocPoint*> hull;
    for (const RocPoint& p : curve.points) {
        while (hull.size() >= 2) {
            const RocPoint* o = hull[hull.size() - 2];
            const RocPoint* a = hull[hull.size() - 1];
            const double cross = (a->far - o->far) * (p.gar - o->gar) - (a->gar - o->gar) * (p.far - o->far);
            if (cross >= 0.0) {
                hull.pop_back();
            } else {
                break;
            }
        }
        hull.push_back(&p);
    }

    // f = far + gar - 1 is non-decreasing along the hull and changes
    // sign exactly once.
    for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
        const RocPoint* p0 = hull[i];
        const RocPoint* p1 = hull[i + 1];
        const double f0 = p0->far + p0->gar - 1.0;
        const double f1 = p1->far + p1->gar - 1.0;
        if (f0 > 0.0 || f1 < 0.0) continue;
        double t;
        if (f1 == f0) {
            t = 0.0;
        } else {
            t = -f0 / (f1 - f0);
        }
        const double eer_value = p0->far + t * (p1->far - p0->far);
        double tau;
        const bool inf0 = std::isinf(p0->tau), inf1 = std::isinf(p1->tau);
        if (inf0 && inf1) {
            tau = 0.0;
        } else if (inf0) {
            tau = p1->tau;
        } else if (inf1) {
            tau = p0->tau;
        } else {
            tau = p0->tau + t * (p1->tau - p0->tau);
        }
        return EerResult{eer_value, tau};
    }
    // Unreachable: the hull spans f = -1 at (0,0) to f = +1 at (1,1).
    throw ContractError("eer: no crossing found on the ROC hull");
}

// GAR at the largest threshold whose empirical FAR is <= far_level.
// Step function of the staircase; no interpolation.
inline double gar_at_far(const ScoreSet& s, double far_level) {
    if (!(far_level >= 0.0 && far_level < 1.0)) {
        throw ContractError("gar_at_far requires 0 <= far_level < 1, got " + std::to_string(far_level));
    }
    const RocCurve curve = roc(s);
    double gar = 0.0;
    for (const RocPoint& p : curve.points) {
        if (p.far <= far_level) gar = p.gar;
    }
    return gar;
}

inline double accuracy_at_eer(const ScoreSet& s) {
    return 1.0 - eer(s).eer;
}

// Equal-width bins over [min, max] with the rightmost bin closed. A
// degenerate range (all values equal) falls back to a single unit-width
// bin holding every value.
inline std::vector<HistBin> histogram(const std::vector<double>& values, std::size_t bins) {
    if (bins == 0) throw ContractError("histogram requires bins >= 1");
    if (values.empty()) throw InsufficientDataError("histogram: no values");
    for (double v : values) {
        if (!std::isfinite(v)) throw DomainError("histogram: non-finite value");
    }
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mn == mx) {
        return {HistBin{mn, mn + 1.0, values.size()}};
    }
    const double width = (mx - mn) / static_cast<double>(bins);
    std::vector<HistBin> out(bins);
    for (std::size_t i = 0; i < bins; ++i) {
        out[i] = HistBin{mn + width * static_cast<double>(i), mn + width * static_cast<double>(i + 1), 0};
    }
    out.back().hi = mx;
    for (double v : values) {
        auto idx = static_cast<std::size_t>((v - mn) / width);
        if (idx >= bins) idx = bins - 1;
        ++out[idx].count;
    }
    return out;
}

inline void write_roc_csv(std::ostream& os, const RocCurve& curve) {
    os << "tau,far,frr,gar\n";
    os << std::setprecision(17);
    for (const RocPoint& p : curve.points) {
        os << p.tau << ',' << p.far << ',' << p.frr << ',' << p.gar << '\n';
    }
}

inline void write_histogram_csv(std::ostream& os, const std::vector<HistBin>& bins) {
    os << "bin_low,bin_high,count\n";
    os << std::setprecision(17);
    for (const HistBin& b : bins) {
        os << b.lo << ',' << b.hi << ',' << b.count << '\n';
    }
}

}  // namespace regnet::metrics
