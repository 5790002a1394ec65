// SPDX-License-Identifier: Apache-2.0

// Classifier baseline checks: loss values and stability, head
// initialization, the logit path, the score convention, and that
// training actually drives the loss down on separable data.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "regnet/baseline.hpp"
#include "regnet/dataio.hpp"
#include "regnet/trainer.hpp"

namespace num = regnet::num;
namespace enc = regnet::enc;
namespace baseline = regnet::baseline;
namespace dataio = regnet::dataio;
namespace train = regnet::train;
namespace model = regnet::model;
using num::Tensor;
using regnet::ContractError;

TEST_CASE("bce loss approaches zero for confident correct logits", "[baseline]") {
    // ln(1 + e^-20), first order e^-20.
    const Tensor confident({2}, {20.0, -20.0});
    const double loss = baseline::bce_loss(confident, {1.0, 0.0}).item();
    CHECK(loss == Catch::Approx(std::exp(-20.0)).epsilon(1e-6));

    // Maximally wrong logits cost about their magnitude.
    const double wrong = baseline::bce_loss(confident, {0.0, 1.0}).item();
    CHECK(wrong == Catch::Approx(20.0).epsilon(1e-6));

    // Indifferent logits cost ln 2 regardless of label.
    const Tensor zero({1}, {0.0});
    CHECK(baseline::bce_loss(zero, {1.0}).item() == Catch::Approx(std::log(2.0)));
    CHECK(baseline::bce_loss(zero, {0.37}).item() == Catch::Approx(std::log(2.0)));
}

TEST_CASE("bce loss stays finite at extreme logits", "[baseline]") {
    const Tensor extreme({2}, {800.0, -800.0});
    const double loss = baseline::bce_loss(extreme, {0.0, 1.0}).item();
    CHECK(std::isfinite(loss));
    CHECK(loss == Catch::Approx(800.0));
}

TEST_CASE("classifier head initializes deterministically with zero bias", "[baseline]") {
    enc::EncoderParams a, b, c;
    baseline::init_classifier(a, 3, 7);
    baseline::init_classifier(b, 3, 7);
    baseline::init_classifier(c, 3, 8);

    REQUIRE(a.at("classifier.weight").shape() == num::Shape{3, 1});
    REQUIRE(a.at("classifier.bias").shape() == num::Shape{1});
    CHECK(a.at("classifier.bias").values()[0] == 0.0);
    CHECK(a.at("classifier.weight").requires_grad());
    CHECK(a.at("classifier.weight").values() == b.at("classifier.weight").values());
    CHECK(a.at("classifier.weight").values() != c.at("classifier.weight").values());

    // The head draws from its own stream: reusing the encoder seed must
    // not replay the encoder's first weights.
    const enc::EncoderConfig cfg = enc::EncoderConfig::desk(1, 8, 8, 3);
    const enc::EncoderParams encoder_params = enc::init_params(cfg, 7);
    const std::vector<double>& first = encoder_params.at("block0.conv.weight").values();
    const std::vector<double>& head = a.at("classifier.weight").values();
    CHECK(std::vector<double>(first.begin(), first.begin() + 3) != head);
}

TEST_CASE("classifier logits are the affine map of the latent batch", "[baseline]") {
    enc::EncoderParams params;
    params["classifier.weight"] = Tensor({2, 1}, {1.0, 2.0}, /*requires_grad=*/true);
    params["classifier.bias"] = Tensor({1}, {0.5}, /*requires_grad=*/true);
    const Tensor z({2, 2}, {1.0, 1.0, 3.0, -1.0});
    const Tensor logits = baseline::classifier_logits(params, z);
    REQUIRE(logits.shape() == num::Shape{2, 1});
    CHECK(logits.values()[0] == Catch::Approx(3.5));
    CHECK(logits.values()[1] == Catch::Approx(1.5));

    enc::EncoderParams empty;
    CHECK_THROWS_AS(baseline::classifier_logits(empty, z), ContractError);
}

TEST_CASE("the baseline score convention inverts the sigmoid", "[baseline]") {
    CHECK(baseline::score_from_logit(0.0) == Catch::Approx(0.5));
    CHECK(baseline::score_from_logit(std::log(3.0)) == Catch::Approx(0.25));
    CHECK(baseline::score_from_logit(40.0) < 1e-15);
    CHECK(baseline::score_from_logit(-40.0) > 1.0 - 1e-15);
    // Lower score = more authorized-like, so the score falls as the
    // logit rises.
    CHECK(baseline::score_from_logit(2.0) < baseline::score_from_logit(1.0));
}

TEST_CASE("training drives the classifier loss well below chance", "[baseline]") {
    dataio::SynthParams p;
    p.height = 8;
    p.width = 8;
    p.identities = 3;
    p.samples_per_identity = 20;
    p.seed = 6;
    const dataio::EnrollmentSplit split =
        dataio::make_enrollment(dataio::generate_synthetic(p), 0, 1, 0.2, 0.75, 2);

    enc::EncoderConfig encoder;
    encoder.arch = enc::ArchKind::kMlp;
    encoder.in_channels = 1;
    encoder.in_height = 8;
    encoder.in_width = 8;
    encoder.mlp_widths = {16};
    encoder.latent_dim = 3;

    train::TrainConfig cfg;
    cfg.steps = 400;
    cfg.batch_size = 16;
    cfg.learning_rate = 3e-3;
    // Soft-label mixing bounds the loss from below by the label
    // entropy, so the loss floor is checked with mixing off.
    cfg.mixup_alpha = 0.0;
    cfg.seed = 3;

    const model::ModelArtifact m =
        train::enroll(split.train, split.calib, encoder, regnet::latent::TargetSpec{}, cfg,
                      model::Objective::kBaselineBce);
    CHECK(m.fingerprint.final_loss < 0.1);
    CHECK(m.fingerprint.final_loss > 0.0);
}
