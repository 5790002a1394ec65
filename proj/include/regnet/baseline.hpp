// SPDX-License-Identifier: Apache-2.0
#pragma once

// Logistic-classifier baseline: the same encoder with a single dense
// sigmoid unit on the latent vector, trained with binary
// cross-entropy. Its decision score is one minus the sigmoid output,
// so the shared "lower = authorized" metrics apply unchanged and the
// operating threshold is swept rather than fixed at 0.5.

#include <cstdint>
#include <random>
#include <vector>

#include "regnet/encoder.hpp"
#include "regnet/errors.hpp"
#include "regnet/tensor.hpp"

namespace regnet::baseline {

// Mean binary cross-entropy of logits [n] or [n,1] against labels in
// [0,1], in the numerically stable log-sum-exp form. Soft labels are
// allowed (mixup uses the mixing coefficient directly).
inline num::Tensor bce_loss(const num::Tensor& logits, const std::vector<double>& labels,
                            num::Graph* g = nullptr) {
    return num::bce_with_logits(logits, labels, g);
}

// Adds the seeded He-initialized classifier head (weights [d,1], zero
// bias) to a parameter map. The seed is decorrelated from the encoder
// initialization stream by a fixed odd constant.
inline void init_classifier(enc::EncoderParams& params, std::size_t latent_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(latent_dim)));
    std::vector<double> w(latent_dim);
    for (double& x : w) x = dist(rng);
    params["classifier.weight"] = num::Tensor({latent_dim, 1}, std::move(w), /*requires_grad=*/true);
    params["classifier.bias"] = num::Tensor({1}, {0.0}, /*requires_grad=*/true);
}

// Classifier logits for a latent batch z: [b,d] -> [b,1].
inline num::Tensor classifier_logits(const enc::EncoderParams& params, const num::Tensor& z,
                                     num::Graph* g = nullptr) {
    const auto w = params.find("classifier.weight");
    const auto b = params.find("classifier.bias");
    if (w == params.end() || b == params.end()) {
        throw ContractError("classifier parameters are missing from the parameter map");
    }
    return num::add(num::matmul(z, w->second, g), b->second, g);
}

// Decision score of a logit under the shared convention: 1 - sigmoid,
// in (0,1), lower = more authorized-like.
inline double score_from_logit(double logit) { return 1.0 - num::sigmoid(logit); }

}  // namespace regnet::baseline
