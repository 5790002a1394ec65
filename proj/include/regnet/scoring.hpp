// SPDX-License-Identifier: Apache-2.0
#pragma once

// Batched scoring of labeled datasets with a trained artifact. Rows
// of a forward batch are independent, so batching is a pure speed
// trade and scores match the single-image path bitwise.

#include <cstddef>
#include <vector>

#include "regnet/baseline.hpp"
#include "regnet/dataio.hpp"
#include "regnet/decision.hpp"
#include "regnet/errors.hpp"
#include "regnet/metrics.hpp"
#include "regnet/model_io.hpp"

namespace regnet::scoring {

// Deterministic center crop, used when an encoder trained on crops
// scores full-size images. Offsets are the floored half-margins.
inline num::Tensor center_crop(const num::Tensor& image, std::size_t ch, std::size_t cw) {
    if (image.rank() != 3) {
        throw DimensionError("center_crop expects a [channels, height, width] image");
    }
    const std::size_t c = image.shape()[0];
    const std::size_t h = image.shape()[1];
    const std::size_t w = image.shape()[2];
    if (ch > h || cw > w) {
        throw DimensionError("crop " + std::to_string(ch) + "x" + std::to_string(cw) +
                             " exceeds the image size " + std::to_string(h) + "x" +
                             std::to_string(w));
    }
    const std::size_t r0 = (h - ch) / 2;
    const std::size_t c0 = (w - cw) / 2;
    num::Tensor out = num::Tensor::zeros({c, ch, cw});
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t r = 0; r < ch; ++r) {
            for (std::size_t q = 0; q < cw; ++q) {
                out.values()[(k * ch + r) * cw + q] =
                    image.values()[(k * h + (r0 + r)) * w + (c0 + q)];
            }
        }
    }
    return out;
}

// Scores every sample in dataset order. Images must match the encoder
// input dimensions; larger images are center-cropped down to them.
inline std::vector<double> score_samples(const model::ModelArtifact& m,
                                         const std::vector<dataio::LabeledSample>& samples,
                                         std::size_t batch_cap = 128) {
    const auto& ec = m.encoder;
    std::vector<double> out;
    out.reserve(samples.size());
    if (batch_cap == 0) batch_cap = 1;
    for (std::size_t lo = 0; lo < samples.size(); lo += batch_cap) {
        const std::size_t hi = std::min(samples.size(), lo + batch_cap);
        const std::size_t b = hi - lo;
        num::Tensor x = num::Tensor::zeros({b, ec.in_channels, ec.in_height, ec.in_width});
        const std::size_t stride = ec.in_channels * ec.in_height * ec.in_width;
        for (std::size_t i = lo; i < hi; ++i) {
            num::Tensor img = samples[i].image;
            if (img.rank() == 3 && img.shape()[0] == ec.in_channels &&
                (img.shape()[1] > ec.in_height || img.shape()[2] > ec.in_width)) {
                img = center_crop(img, ec.in_height, ec.in_width);
            }
            if (img.shape() != num::Shape{ec.in_channels, ec.in_height, ec.in_width}) {
                throw DimensionError("sample " + std::to_string(i) + " has shape " +
                                     num::shape_str(img.shape()) + " but the encoder expects " +
                                     num::shape_str({ec.in_channels, ec.in_height, ec.in_width}));
            }
            std::copy(img.values().begin(), img.values().end(),
                      x.values().begin() + static_cast<std::ptrdiff_t>((i - lo) * stride));
        }
        num::Tensor z = enc::forward(ec, m.params, x);
        if (m.objective == model::Objective::kBaselineBce) {
            num::Tensor logits = baseline::classifier_logits(m.params, z);
            for (std::size_t r = 0; r < b; ++r) {
                out.push_back(baseline::score_from_logit(logits.values()[r]));
            }
        } else {
            const std::size_t d = z.shape()[1];
            for (std::size_t r = 0; r < b; ++r) {
                const std::vector<double> row(
                    z.values().begin() + static_cast<std::ptrdiff_t>(r * d),
                    z.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
                out.push_back(decision::statistic(row, m.target));
            }
        }
    }
    return out;
}

// Splits per-sample scores by ground-truth label into the score-set
// form the metrics take.
inline metrics::ScoreSet score_dataset(const model::ModelArtifact& m, const dataio::Dataset& data,
                                       std::size_t batch_cap = 128) {
    const std::vector<double> s = score_samples(m, data.samples, batch_cap);
    metrics::ScoreSet set;
    for (std::size_t i = 0; i < s.size(); ++i) {
        (data.samples[i].label == 1 ? set.authorized : set.unauthorized).push_back(s[i]);
    }
    return set;
}

}  // namespace regnet::scoring
