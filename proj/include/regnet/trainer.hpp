// SPDX-License-Identifier: Apache-2.0
#pragma once

// Enrollment: minibatch assembly with optional crop augmentation,
// mixup in both its pile-assignment and soft-label forms, the Adam
// update, and the training loop that turns a labeled split into a
// calibrated model artifact.
//
// Every stochastic choice flows through one std::mt19937_64 in a
// fixed draw order (per sampled image: class index, then crop offsets
// when cropping; per mixup pair: authorized index, unauthorized
// index, then the two gamma draws behind the Beta coefficient), so a
// seed pins the whole run.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "regnet/baseline.hpp"
#include "regnet/dataio.hpp"
#include "regnet/decision.hpp"
#include "regnet/encoder.hpp"
#include "regnet/errors.hpp"
#include "regnet/latent_objective.hpp"
#include "regnet/model_io.hpp"
#include "regnet/scoring.hpp"
#include "regnet/tensor.hpp"

namespace regnet::train {

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 100;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double mixup_alpha = 0.2;
    // Fraction of each batch drawn from the authorized class; the
    // authorized count is the ceiling of batch_size * auth_fraction.
    double auth_fraction = 0.5;
    // Crop height/width; both set or both unset.
    std::optional<std::pair<std::size_t, std::size_t>> crop;
    double calibration_far = 1e-2;
    std::size_t telemetry_every = 50;
    std::uint64_t seed = 1;

    std::size_t auth_per_batch() const {
        return static_cast<std::size_t>(
            std::ceil(static_cast<double>(batch_size) * auth_fraction));
    }
    std::size_t unauth_per_batch() const { return batch_size - auth_per_batch(); }

    void validate() const {
        if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw ConfigError("Adam betas must lie in [0, 1)");
        }
        if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
        if (!(mixup_alpha >= 0.0)) throw ConfigError("mixup_alpha must be non-negative");
        if (!(auth_fraction > 0.0 && auth_fraction < 1.0)) {
            throw ConfigError("auth_fraction must lie strictly between 0 and 1");
        }
        if (unauth_per_batch() == 0) {
            throw ConfigError("auth_fraction leaves no unauthorized samples in a batch of " +
                              std::to_string(batch_size));
        }
        if (crop && (crop->first == 0 || crop->second == 0)) {
            throw ConfigError("crop dimensions must be positive");
        }
        if (!(calibration_far >= 0.0 && calibration_far < 1.0)) {
            throw ConfigError("calibration_far must lie in [0, 1)");
        }
        if (telemetry_every == 0) throw ConfigError("telemetry_every must be positive");
    }
};

// One first/second-moment pair per parameter, plus the shared step
// counter for bias correction.
struct AdamState {
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::map<std::string, Moments> moments;
    std::uint64_t t = 0;
};

struct TelemetryRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double auth_norm = 0.0;
    double unauth_norm = 0.0;
    std::string line;
};

// Beta(alpha, alpha) via the two-gamma construction.
inline double beta_sample(double alpha, std::mt19937_64& rng) {
    if (!(alpha > 0.0)) throw ContractError("beta_sample requires a positive alpha");
    std::gamma_distribution<double> gamma(alpha, 1.0);
    const double x = gamma(rng);
    const double y = gamma(rng);
    if (!(x + y > 0.0)) return 0.5;  // both draws underflowed to zero
    return x / (x + y);
}

namespace detail {

// Copies one sampled image into row `row` of the batch tensor,
// cropping first when configured.
inline void place_sample(num::Tensor& batch, std::size_t row, const num::Tensor& image,
                         const TrainConfig& cfg, std::mt19937_64& rng) {
    num::Tensor src = image;
    if (cfg.crop) src = dataio::random_crop(image, cfg.crop->first, cfg.crop->second, rng);
    const std::size_t stride = batch.size() / batch.shape()[0];
    if (src.size() != stride) {
        throw DimensionError("sampled image has shape " + num::shape_str(src.shape()) +
                             " but the batch expects " + std::to_string(stride) +
                             " values per row");
    }
    std::copy(src.values().begin(), src.values().end(),
              batch.values().begin() + static_cast<std::ptrdiff_t>(row * stride));
}

}  // namespace detail

// Stacks the rows of two batches with identical trailing dimensions.
inline num::Tensor concat_rows(const num::Tensor& a, const num::Tensor& b) {
    if (a.rank() == 0 || b.rank() != a.rank() ||
        !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
        throw DimensionError("cannot stack batches of shapes " + num::shape_str(a.shape()) +
                             " and " + num::shape_str(b.shape()));
    }
    num::Shape shape = a.shape();
    shape[0] += b.shape()[0];
    num::Tensor out = num::Tensor::zeros(shape);
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

// Draws one minibatch uniformly with replacement from each class.
// Returns {authorized batch, unauthorized batch} with the configured
// class counts, cropped when cropping is configured.
inline std::pair<num::Tensor, num::Tensor> assemble_batch(const dataio::Dataset& data,
                                                          const TrainConfig& cfg,
                                                          std::mt19937_64& rng) {
    std::vector<std::size_t> auth_idx;
    std::vector<std::size_t> unauth_idx;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        (data.samples[i].label == 1 ? auth_idx : unauth_idx).push_back(i);
    }
    if (auth_idx.empty()) {
        throw InsufficientDataError("training split contains no authorized samples");
    }
    if (unauth_idx.empty()) {
        throw InsufficientDataError("training split contains no unauthorized samples");
    }
    const num::Shape& first = data.samples.front().image.shape();
    if (first.size() != 3) {
        throw DimensionError("training images must be rank-3 [channels, height, width]");
    }
    std::size_t out_h = first[1];
    std::size_t out_w = first[2];
    if (cfg.crop) {
        out_h = cfg.crop->first;
        out_w = cfg.crop->second;
    }
    const std::size_t na = cfg.auth_per_batch();
    const std::size_t nu = cfg.unauth_per_batch();
    num::Tensor xa = num::Tensor::zeros({na, first[0], out_h, out_w});
    num::Tensor xu = num::Tensor::zeros({nu, first[0], out_h, out_w});
    std::uniform_int_distribution<std::size_t> pick_a(0, auth_idx.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_u(0, unauth_idx.size() - 1);
    for (std::size_t r = 0; r < na; ++r) {
        detail::place_sample(xa, r, data.samples[auth_idx[pick_a(rng)]].image, cfg, rng);
    }
    for (std::size_t r = 0; r < nu; ++r) {
        detail::place_sample(xu, r, data.samples[unauth_idx[pick_u(rng)]].image, cfg, rng);
    }
    return {std::move(xa), std::move(xu)};
}

// Mixup with hard pile assignment: each generated pair joins the
// authorized pile when its coefficient exceeds one half and the
// unauthorized pile otherwise; pairs whose destination pile is full
// are discarded and resampled, so class counts are preserved. With
// alpha == 0 the inputs pass through untouched.
struct MixedPiles {
    num::Tensor authorized;
    num::Tensor unauthorized;
};

inline MixedPiles mixup_piles(const num::Tensor& xa, const num::Tensor& xu, double alpha,
                              std::mt19937_64& rng) {
    if (alpha == 0.0) return {xa, xu};
    if (!(alpha > 0.0)) throw ConfigError("mixup_alpha must be non-negative");
    if (xa.rank() < 2 || xu.rank() != xa.rank() ||
        !std::equal(xa.shape().begin() + 1, xa.shape().end(), xu.shape().begin() + 1)) {
        throw DimensionError("mixup requires batches with identical per-sample shapes, got " +
                             num::shape_str(xa.shape()) + " and " + num::shape_str(xu.shape()));
    }
    const std::size_t na = xa.shape()[0];
    const std::size_t nu = xu.shape()[0];
    const std::size_t stride = xa.size() / na;
    num::Tensor oa = num::Tensor::zeros(xa.shape());
    num::Tensor ou = num::Tensor::zeros(xu.shape());
    std::uniform_int_distribution<std::size_t> pick_a(0, na - 1);
    std::uniform_int_distribution<std::size_t> pick_u(0, nu - 1);
    std::size_t filled_a = 0;
    std::size_t filled_u = 0;
    while (filled_a < na || filled_u < nu) {
        const std::size_t i = pick_a(rng);
        const std::size_t j = pick_u(rng);
        const double lam = beta_sample(alpha, rng);
        const bool to_auth = lam > 0.5;
        num::Tensor* dst = nullptr;
        std::size_t row = 0;
        if (to_auth && filled_a < na) {
            dst = &oa;
            row = filled_a++;
        } else if (!to_auth && filled_u < nu) {
            dst = &ou;
            row = filled_u++;
        } else {
            continue;  // destination pile full; draw again
        }
        const double* pa = xa.values().data() + i * stride;
        const double* pu = xu.values().data() + j * stride;
        double* out = dst->values().data() + row * stride;
        for (std::size_t k = 0; k < stride; ++k) out[k] = lam * pa[k] + (1.0 - lam) * pu[k];
    }
    return {std::move(oa), std::move(ou)};
}

// Mixup with soft labels: one mixed sample per input row, labeled by
// its mixing coefficient. With alpha == 0 the concatenated inputs
// pass through with hard 1/0 labels.
struct SoftBatch {
    num::Tensor x;
    std::vector<double> labels;
};

inline SoftBatch mixup_soft(const num::Tensor& xa, const num::Tensor& xu, double alpha,
                            std::mt19937_64& rng) {
    const std::size_t na = xa.shape()[0];
    const std::size_t nu = xu.shape()[0];
    if (alpha == 0.0) {
        SoftBatch out{concat_rows(xa, xu), std::vector<double>(na + nu, 0.0)};
        std::fill(out.labels.begin(), out.labels.begin() + static_cast<std::ptrdiff_t>(na), 1.0);
        return out;
    }
    if (!(alpha > 0.0)) throw ConfigError("mixup_alpha must be non-negative");
    if (xa.rank() < 2 || xu.rank() != xa.rank() ||
        !std::equal(xa.shape().begin() + 1, xa.shape().end(), xu.shape().begin() + 1)) {
        throw DimensionError("mixup requires batches with identical per-sample shapes, got " +
                             num::shape_str(xa.shape()) + " and " + num::shape_str(xu.shape()));
    }
    const std::size_t stride = xa.size() / na;
    num::Shape shape = xa.shape();
    shape[0] = na + nu;
    SoftBatch out{num::Tensor::zeros(shape), std::vector<double>(na + nu, 0.0)};
    std::uniform_int_distribution<std::size_t> pick_a(0, na - 1);
    std::uniform_int_distribution<std::size_t> pick_u(0, nu - 1);
    for (std::size_t r = 0; r < na + nu; ++r) {
        const std::size_t i = pick_a(rng);
        const std::size_t j = pick_u(rng);
        const double lam = beta_sample(alpha, rng);
        const double* pa = xa.values().data() + i * stride;
        const double* pu = xu.values().data() + j * stride;
        double* dst = out.x.values().data() + r * stride;
        for (std::size_t k = 0; k < stride; ++k) dst[k] = lam * pa[k] + (1.0 - lam) * pu[k];
        out.labels[r] = lam;
    }
    return out;
}

// One Adam update over every parameter, with bias-corrected moments.
// Parameters update independently, so map order only fixes moment
// allocation order.
inline void adam_step(enc::EncoderParams& params, AdamState& state, const TrainConfig& cfg) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (auto& [name, p] : params) {
        if (!p.has_grad()) {
            throw ContractError("parameter '" + name +
                                "' has no gradient; run backward before the optimizer step");
        }
        AdamState::Moments& mom = state.moments[name];
        if (mom.m.empty()) {
            mom.m.assign(p.size(), 0.0);
            mom.v.assign(p.size(), 0.0);
        }
        if (mom.m.size() != p.size()) {
            throw ContractError("optimizer state for '" + name +
                                "' does not match the parameter size");
        }
        const std::vector<double>& g = p.grad();
        std::vector<double>& theta = p.values();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g[i];
            mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

namespace detail {

inline double mean_statistic(const num::Tensor& z, const latent::TargetSpec& target,
                             const std::vector<std::size_t>& rows) {
    if (rows.empty()) return 0.0;
    const std::size_t d = z.shape()[1];
    double acc = 0.0;
    for (std::size_t r : rows) {
        const std::vector<double> row(z.values().begin() + static_cast<std::ptrdiff_t>(r * d),
                                      z.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
        acc += decision::statistic(row, target);
    }
    return acc / static_cast<double>(rows.size());
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    return rows;
}

inline std::string format_telemetry(std::size_t step, double loss, double auth_norm,
                                    double unauth_norm) {
    std::ostringstream os;
    os << std::setprecision(6);
    os << "step=" << step << " loss=" << loss << " auth_norm=" << auth_norm
       << " unauth_norm=" << unauth_norm;
    return os.str();
}

}  // namespace detail

// Trains an encoder on the labeled training split and calibrates its
// acceptance threshold on the held-out calibration split at the
// configured false-accept target. Telemetry lines go to `telemetry`
// (and `records` when given) every telemetry_every steps. A non-finite
// loss or a numeric failure mid-step aborts with the last telemetry
// attached. steps == 0 yields a calibrated artifact with freshly
// initialized parameters.
inline model::ModelArtifact enroll(const dataio::Dataset& train_set,
                                   const dataio::Dataset& calib_set,
                                   const enc::EncoderConfig& encoder,
                                   const latent::TargetSpec& target, const TrainConfig& cfg,
                                   model::Objective objective = model::Objective::kRegnetKl,
                                   std::ostream* telemetry = nullptr,
                                   std::vector<TelemetryRecord>* records = nullptr) {
    encoder.validate();
    target.validate();
    cfg.validate();
    if (encoder.latent_dim != target.d) {
        throw ConfigError("encoder latent dimension " + std::to_string(encoder.latent_dim) +
                          " does not match the target dimension " + std::to_string(target.d));
    }
    if (objective == model::Objective::kRegnetKl &&
        (cfg.auth_per_batch() < 2 || cfg.unauth_per_batch() < 2)) {
        throw ConfigError(
            "batch statistics need at least 2 samples per class per batch; adjust "
            "batch_size or auth_fraction");
    }

    enc::EncoderParams params = enc::init_params(encoder, cfg.seed);
    if (objective == model::Objective::kBaselineBce) {
        baseline::init_classifier(params, encoder.latent_dim, cfg.seed);
    }

    std::mt19937_64 rng(cfg.seed);
    AdamState adam;
    std::string last_line;
    double final_loss = 0.0;

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        auto [xa, xu] = assemble_batch(train_set, cfg, rng);
        num::Graph g;
        for (auto& [name, p] : params) {
            (void)name;
            p.zero_grad();
        }
        double loss_value = 0.0;
        double auth_norm = 0.0;
        double unauth_norm = 0.0;
        try {
            num::Tensor loss;
            if (objective == model::Objective::kRegnetKl) {
                MixedPiles piles = mixup_piles(xa, xu, cfg.mixup_alpha, rng);
                num::Tensor za = enc::forward(encoder, params, piles.authorized, &g);
                num::Tensor zu = enc::forward(encoder, params, piles.unauthorized, &g);
                loss = latent::combined_loss(za, zu, target, &g);
                auth_norm =
                    detail::mean_statistic(za, target, detail::iota_rows(za.shape()[0]));
                unauth_norm =
                    detail::mean_statistic(zu, target, detail::iota_rows(zu.shape()[0]));
            } else {
                SoftBatch batch = mixup_soft(xa, xu, cfg.mixup_alpha, rng);
                num::Tensor z = enc::forward(encoder, params, batch.x, &g);
                num::Tensor logits = baseline::classifier_logits(params, z, &g);
                loss = baseline::bce_loss(logits, batch.labels, &g);
                std::vector<std::size_t> ra;
                std::vector<std::size_t> ru;
                for (std::size_t r = 0; r < batch.labels.size(); ++r) {
                    (batch.labels[r] > 0.5 ? ra : ru).push_back(r);
                }
                auth_norm = detail::mean_statistic(z, target, ra);
                unauth_norm = detail::mean_statistic(z, target, ru);
            }
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw TrainingDivergedError(
                    "training diverged at step " + std::to_string(step) +
                        ": loss is not finite",
                    last_line);
            }
            g.backward(loss);
        } catch (const NumericError& e) {
            throw TrainingDivergedError("training diverged at step " + std::to_string(step) +
                                            ": " + e.what(),
                                        last_line);
        }
        adam_step(params, adam, cfg);
        final_loss = loss_value;
        if (step % cfg.telemetry_every == 0) {
            const std::string line =
                detail::format_telemetry(step, loss_value, auth_norm, unauth_norm);
            last_line = line;
            if (telemetry) (*telemetry) << line << '\n';
            if (records) {
                records->push_back(TelemetryRecord{step, loss_value, auth_norm, unauth_norm, line});
            }
        }
    }

    model::ModelArtifact artifact;
    artifact.target = target;
    artifact.encoder = encoder;
    artifact.objective = objective;
    artifact.params = std::move(params);
    artifact.fingerprint = model::TrainingFingerprint{cfg.seed, cfg.steps, final_loss};
    artifact.threshold =
        decision::DecisionThreshold{0.0, decision::Calibration::kManual, 0.0};

    metrics::ScoreSet calib_scores = scoring::score_dataset(artifact, calib_set);
    artifact.threshold = decision::calibrate_empirical(calib_scores, cfg.calibration_far);
    return artifact;
}

}  // namespace regnet::train
