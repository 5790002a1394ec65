// SPDX-License-Identifier: Apache-2.0
#pragma once

// Distribution-matching objective over encoder outputs.
//
// Each class of a batch is summarized by its per-dimension sample mean
// and population variance, then pulled toward an isotropic target
// Gaussian through the closed-form KL divergence between diagonal
// Gaussians. Authorized samples target N(mu_auth * 1, sigma_auth^2 I),
// everything else targets N(mu_unauth * 1, sigma_unauth^2 I) with
// mu_auth < mu_unauth, so the two populations separate along the
// latent norm.

#include <cmath>
#include <cstddef>
#include <string>

#include "regnet/errors.hpp"
#include "regnet/tensor.hpp"

namespace regnet::latent {

// Floor applied to batch variances inside the log and trace terms of
// the KL; keeps the objective finite when a batch collapses.
inline constexpr double kVarianceFloor = 1e-6;

struct TargetSpec {
    std::size_t d = 3;
    double mu_auth = 0.0;
    double sigma_auth = 1.0;
    double mu_unauth = 40.0;
    double sigma_unauth = 1.0;

    void validate() const {
        if (d < 1) throw ConfigError("target latent dimension must be >= 1");
        if (!(sigma_auth > 0.0) || !(sigma_unauth > 0.0)) {
            throw ConfigError("target sigmas must be positive");
        }
        if (!(mu_auth < mu_unauth)) {
            throw ConfigError("target means must satisfy mu_auth < mu_unauth, got " +
                              std::to_string(mu_auth) + " and " + std::to_string(mu_unauth));
        }
    }
};

struct BatchStats {
    num::Tensor mean;  // [d]
    num::Tensor var;   // [d], population variance
    std::size_t count = 0;
};

// Per-dimension sample mean and population variance of z: [b,d].
// Differentiable wrt z. Requires b >= 2.
inline BatchStats batch_stats(const num::Tensor& z, num::Graph* g = nullptr) {
    if (z.rank() != 2) {
        throw DimensionError("batch_stats expects [b,d], got " + num::shape_str(z.shape()));
    }
    if (z.shape()[0] < 2) {
        throw DegenerateBatchError("batch_stats needs at least 2 rows, got " +
                                   std::to_string(z.shape()[0]));
    }
    BatchStats s;
    s.mean = num::reduce_mean(z, 0, g);
    s.var = num::reduce_var(z, 0, g);
    s.count = z.shape()[0];
    return s;
}

// KL( N(mean, diag(var)) || N(mu_t * 1, sigma_t^2 I) ) in closed form:
//   1/2 [ d ln sigma_t^2 - sum_i ln var_i - d
//         + sum_i var_i / sigma_t^2 + ||mean - mu_t 1||^2 / sigma_t^2 ]
// with var floored at kVarianceFloor inside the log and trace terms.
// Returns a scalar tensor; exactly zero when the moments match the
// target.
inline num::Tensor kl_to_target(const BatchStats& stats, double mu_t, double sigma_t,
                                num::Graph* g = nullptr) {
    if (!(sigma_t > 0.0)) throw ConfigError("kl_to_target requires sigma_t > 0");
    if (stats.mean.rank() != 1 || stats.var.rank() != 1 ||
        stats.mean.shape()[0] != stats.var.shape()[0]) {
        throw DimensionError("kl_to_target stats have shapes " + num::shape_str(stats.mean.shape()) +
                             " and " + num::shape_str(stats.var.shape()));
    }
    const auto d = static_cast<double>(stats.mean.shape()[0]);
    const double inv_s2 = 1.0 / (sigma_t * sigma_t);

    num::Tensor vf = num::clamp_min(stats.var, kVarianceFloor, g);
    num::Tensor log_term = num::reduce_sum(num::log(vf, g), 0, g);
    num::Tensor trace_term = num::reduce_sum(vf, 0, g);
    num::Tensor mean_dev = num::reduce_sum(num::square(num::add_scalar(stats.mean, -mu_t, g), g), 0, g);

    num::Tensor acc = num::add(num::mul_scalar(log_term, -1.0, g),
                               num::mul_scalar(trace_term, inv_s2, g), g);
    acc = num::add(acc, num::mul_scalar(mean_dev, inv_s2, g), g);
    acc = num::add_scalar(acc, d * std::log(sigma_t * sigma_t) - d, g);
    num::Tensor kl = num::mul_scalar(acc, 0.5, g);
    if (!std::isfinite(kl.item())) {
        throw NumericError("kl_to_target produced a non-finite value");
    }
    return kl;
}

// L = 1/2 KL(stats(z_auth) -> authorized target)
//   + 1/2 KL(stats(z_unauth) -> unauthorized target).
// z_auth, z_unauth: [b,d] with b >= 2 each and d == target.d.
inline num::Tensor combined_loss(const num::Tensor& z_auth, const num::Tensor& z_unauth,
                                 const TargetSpec& target, num::Graph* g = nullptr) {
    target.validate();
    for (const auto* pair : {&z_auth, &z_unauth}) {
        const bool is_auth = pair == &z_auth;
        const char* cls = is_auth ? "authorized" : "unauthorized";
        if (pair->rank() != 2 || pair->shape()[1] != target.d) {
            throw DimensionError(std::string("combined_loss ") + cls + " batch has shape " +
                                 num::shape_str(pair->shape()) + ", expected [b," +
                                 std::to_string(target.d) + "]");
        }
        if (pair->shape()[0] < 2) {
            throw DegenerateBatchError(std::string("combined_loss ") + cls +
                                       " batch needs at least 2 rows, got " +
                                       std::to_string(pair->shape()[0]));
        }
    }
    const BatchStats sa = batch_stats(z_auth, g);
    const BatchStats su = batch_stats(z_unauth, g);
    num::Tensor la = kl_to_target(sa, target.mu_auth, target.sigma_auth, g);
    num::Tensor lu = kl_to_target(su, target.mu_unauth, target.sigma_unauth, g);
    return num::mul_scalar(num::add(la, lu, g), 0.5, g);
}

}  // namespace regnet::latent
