// SPDX-License-Identifier: Apache-2.0
#pragma once

// Accept/reject rule over encoder outputs and its threshold
// calibration.
//
// The decision statistic is the Euclidean distance of a latent vector
// from the authorized target center; a sample is accepted iff the
// statistic is <= tau, boundary inclusive. Thresholds come from either
// an empirical FAR sweep or the analytic chi-square quantile of the
// authorized target.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "regnet/errors.hpp"
#include "regnet/latent_objective.hpp"
#include "regnet/metrics.hpp"
#include "regnet/special.hpp"

namespace regnet::decision {

enum class Calibration {
    kManual,
    kEmpiricalFar,
    kChiSquareFrr,
};

inline const char* calibration_name(Calibration c) {
    switch (c) {
        case Calibration::kManual: return "manual";
        case Calibration::kEmpiricalFar: return "empirical_far";
        case Calibration::kChiSquareFrr: return "chi_square_frr";
    }
    return "manual";
}

inline Calibration calibration_from_name(const std::string& name) {
    if (name == "manual") return Calibration::kManual;
    if (name == "empirical_far") return Calibration::kEmpiricalFar;
    if (name == "chi_square_frr") return Calibration::kChiSquareFrr;
    throw ParseError("unknown calibration kind '" + name + "'");
}

struct DecisionThreshold {
    double tau = 0.0;
    Calibration calibration = Calibration::kManual;
    // Target FAR or FRR the calibration aimed at; 0 for manual.
    double reference = 0.0;
};

// ||z - mu_auth * 1||_2 for a latent vector of dimension target.d.
inline double statistic(const std::vector<double>& z, const latent::TargetSpec& target) {
    if (z.size() != target.d) {
        throw DimensionError("statistic got latent of dimension " + std::to_string(z.size()) +
                             ", target expects " + std::to_string(target.d));
    }
    double acc = 0.0;
    for (double v : z) {
        const double dv = v - target.mu_auth;
        acc += dv * dv;
    }
    return std::sqrt(acc);
}

// Accept iff statistic <= tau.
inline bool decide(double stat, const DecisionThreshold& threshold) {
    if (!std::isfinite(stat)) throw DomainError("decide: non-finite statistic");
    return stat <= threshold.tau;
}

// Largest threshold whose empirical FAR on the unauthorized statistics
// stays at or below target_far. Candidates are midpoints between
// adjacent distinct sorted unauthorized scores plus sentinels one unit
// below the minimum and above the maximum.
inline DecisionThreshold calibrate_empirical(const metrics::ScoreSet& scores, double target_far) {
    if (!(target_far >= 0.0 && target_far < 1.0)) {
        throw ContractError("calibrate_empirical requires 0 <= target_far < 1, got " +
                            std::to_string(target_far));
    }
    if (scores.unauthorized.empty()) {
        throw InsufficientDataError("calibrate_empirical: no unauthorized scores");
    }
    std::vector<double> sorted = scores.unauthorized;
    for (double v : sorted) {
        if (!std::isfinite(v)) throw DomainError("calibrate_empirical: non-finite unauthorized score");
    }
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct = sorted;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> candidates;
    candidates.push_back(distinct.front() - 1.0);
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
        candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
    }
    candidates.push_back(distinct.back() + 1.0);

    double best = candidates.front();
    for (double tau : candidates) {
        const double far = metrics::detail::frac_leq(sorted, tau);
        if (far <= target_far) best = tau;
    }
    return DecisionThreshold{best, Calibration::kEmpiricalFar, target_far};
}

// Analytic threshold assuming the authorized latents follow their
// target Gaussian exactly: the squared statistic is then
// sigma_auth^2 * chi-square(d), so
//   tau = sigma_auth * sqrt(Q_{chi2(d)}(1 - target_frr)).
inline DecisionThreshold calibrate_chi_square(double target_frr, const latent::TargetSpec& target) {
    target.validate();
    if (!(target_frr > 0.0 && target_frr < 1.0)) {
        throw ContractError("calibrate_chi_square requires 0 < target_frr < 1, got " +
                            std::to_string(target_frr));
    }
    const double q = special::chi_square_quantile(target.d, 1.0 - target_frr);
    return DecisionThreshold{target.sigma_auth * std::sqrt(q), Calibration::kChiSquareFrr, target_frr};
}

}  // namespace regnet::decision
