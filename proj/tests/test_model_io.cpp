// SPDX-License-Identifier: Apache-2.0

// Model artifact checks: the float32 round trip, byte-identical
// re-saves, parameter inventory validation, header corruption
// handling, and the saved-artifact scoring path.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "regnet/baseline.hpp"
#include "regnet/model_io.hpp"

namespace fs = std::filesystem;
namespace num = regnet::num;
namespace enc = regnet::enc;
namespace model = regnet::model;
namespace decision = regnet::decision;
using num::Tensor;
using regnet::ConfigError;
using regnet::DimensionError;
using regnet::IoError;
using regnet::ParseError;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("regnet_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t u32_at(const std::string& s, std::size_t off) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(s[off])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 3])) << 24);
}

void put_u32(std::string& s, std::size_t off, std::uint32_t v) {
    s[off] = static_cast<char>(v & 0xff);
    s[off + 1] = static_cast<char>((v >> 8) & 0xff);
    s[off + 2] = static_cast<char>((v >> 16) & 0xff);
    s[off + 3] = static_cast<char>((v >> 24) & 0xff);
}

model::ModelArtifact make_artifact(model::Objective objective) {
    model::ModelArtifact m;
    m.encoder = enc::EncoderConfig::desk(1, 8, 8, 3);
    m.objective = objective;
    m.params = enc::init_params(m.encoder, 3);
    if (objective == model::Objective::kBaselineBce) {
        regnet::baseline::init_classifier(m.params, m.encoder.latent_dim, 3);
    }
    m.threshold = decision::DecisionThreshold{2.5, decision::Calibration::kEmpiricalFar, 0.01};
    m.fingerprint = model::TrainingFingerprint{3, 17, 0.12345678901234567};
    return m;
}

// A two-pixel identity encoder whose latent equals the input, so
// scores have closed forms.
model::ModelArtifact identity_artifact(model::Objective objective) {
    model::ModelArtifact m;
    m.encoder.arch = enc::ArchKind::kMlp;
    m.encoder.in_channels = 1;
    m.encoder.in_height = 1;
    m.encoder.in_width = 2;
    m.encoder.latent_dim = 2;
    m.target.d = 2;
    m.objective = objective;
    m.params["head.weight"] = Tensor({2, 2}, {1, 0, 0, 1}, /*requires_grad=*/true);
    m.params["head.bias"] = Tensor({2}, {0, 0}, /*requires_grad=*/true);
    if (objective == model::Objective::kBaselineBce) {
        m.params["classifier.weight"] = Tensor({2, 1}, {0, 0}, /*requires_grad=*/true);
        m.params["classifier.bias"] = Tensor({1}, {std::log(3.0)}, /*requires_grad=*/true);
    }
    m.threshold = decision::DecisionThreshold{10.0, decision::Calibration::kEmpiricalFar, 0.01};
    return m;
}

}  // namespace

TEST_CASE("model artifacts round trip through disk at float precision", "[model]") {
    const fs::path dir = scratch_dir("model_rt");
    const model::ModelArtifact m = make_artifact(model::Objective::kRegnetKl);
    model::save_model(m, dir / "m.rgnt");
    const model::ModelArtifact back = model::load_model(dir / "m.rgnt");

    CHECK(back.objective == model::Objective::kRegnetKl);
    CHECK(back.encoder.arch == enc::ArchKind::kConvResidual);
    CHECK(back.encoder.in_channels == 1);
    CHECK(back.encoder.in_height == 8);
    CHECK(back.encoder.in_width == 8);
    CHECK(enc::format_blocks(back.encoder.blocks) == enc::format_blocks(m.encoder.blocks));
    CHECK(back.encoder.latent_dim == 3);
    CHECK(back.target.d == 3);
    CHECK(back.target.mu_auth == m.target.mu_auth);
    CHECK(back.target.mu_unauth == m.target.mu_unauth);
    CHECK(back.target.sigma_auth == m.target.sigma_auth);
    CHECK(back.target.sigma_unauth == m.target.sigma_unauth);
    CHECK(back.threshold.tau == 2.5);
    CHECK(back.threshold.calibration == decision::Calibration::kEmpiricalFar);
    CHECK(back.threshold.reference == 0.01);
    CHECK(back.fingerprint.seed == 3);
    CHECK(back.fingerprint.steps == 17);
    CHECK(back.fingerprint.final_loss == 0.12345678901234567);

    REQUIRE(back.params.size() == m.params.size());
    for (const auto& [name, original] : m.params) {
        const Tensor& loaded = back.params.at(name);
        REQUIRE(loaded.shape() == original.shape());
        CHECK(loaded.requires_grad());
        for (std::size_t i = 0; i < original.size(); ++i) {
            // Stored single-width: the loss is exactly one double->float
            // cast.
            CHECK(loaded.values()[i] == static_cast<double>(static_cast<float>(original.values()[i])));
        }
    }
}

TEST_CASE("saving a model is deterministic and idempotent", "[model]") {
    const fs::path dir = scratch_dir("model_bytes");
    const model::ModelArtifact m = make_artifact(model::Objective::kBaselineBce);
    model::save_model(m, dir / "a.rgnt");
    model::save_model(m, dir / "b.rgnt");
    CHECK(slurp(dir / "a.rgnt") == slurp(dir / "b.rgnt"));

    // Loading and re-saving changes nothing: parameters are already
    // float-quantized and header numbers print reproducibly.
    model::save_model(model::load_model(dir / "a.rgnt"), dir / "c.rgnt");
    CHECK(slurp(dir / "a.rgnt") == slurp(dir / "c.rgnt"));
}

TEST_CASE("the baseline objective requires the classifier head", "[model]") {
    const fs::path dir = scratch_dir("model_inventory");
    model::ModelArtifact m = make_artifact(model::Objective::kBaselineBce);
    m.params.erase("classifier.weight");
    CHECK_THROWS_WITH(model::save_model(m, dir / "x.rgnt"),
                      Catch::Matchers::ContainsSubstring("classifier.weight"));

    // The distribution objective must not carry one.
    model::ModelArtifact extra = make_artifact(model::Objective::kRegnetKl);
    regnet::baseline::init_classifier(extra.params, 3, 4);
    CHECK_THROWS_WITH(model::save_model(extra, dir / "x.rgnt"),
                      Catch::Matchers::ContainsSubstring("unexpected parameter"));
}

TEST_CASE("artifact validation rejects shape and dimension mismatches", "[model]") {
    const fs::path dir = scratch_dir("model_shapes");
    model::ModelArtifact m = make_artifact(model::Objective::kRegnetKl);
    m.params.at("head.bias") = Tensor({4}, {0, 0, 0, 0}, /*requires_grad=*/true);
    CHECK_THROWS_WITH(model::save_model(m, dir / "x.rgnt"),
                      Catch::Matchers::ContainsSubstring("head.bias"));

    model::ModelArtifact mismatch = make_artifact(model::Objective::kRegnetKl);
    mismatch.target.d = 2;
    CHECK_THROWS_AS(model::save_model(mismatch, dir / "x.rgnt"), ConfigError);

    CHECK_THROWS_AS(model::save_model(make_artifact(model::Objective::kRegnetKl),
                                      dir / "no_such_dir" / "x.rgnt"),
                    IoError);
    CHECK_THROWS_AS(model::load_model(dir / "absent.rgnt"), IoError);
}

TEST_CASE("corrupted model files fail with specific messages", "[model]") {
    const fs::path dir = scratch_dir("model_corrupt");
    model::save_model(make_artifact(model::Objective::kRegnetKl), dir / "good.rgnt");
    const std::string good = slurp(dir / "good.rgnt");

    std::string bad_magic = good;
    bad_magic.replace(0, 4, "JUNK");
    spit(dir / "magic.rgnt", bad_magic);
    CHECK_THROWS_WITH(model::load_model(dir / "magic.rgnt"),
                      Catch::Matchers::ContainsSubstring("bad magic"));

    std::string bad_version = good;
    put_u32(bad_version, 4, 99);
    spit(dir / "version.rgnt", bad_version);
    CHECK_THROWS_WITH(model::load_model(dir / "version.rgnt"),
                      Catch::Matchers::ContainsSubstring("version 99"));

    spit(dir / "short.rgnt", good.substr(0, good.size() - 10));
    CHECK_THROWS_WITH(model::load_model(dir / "short.rgnt"),
                      Catch::Matchers::ContainsSubstring("truncated"));

    // Splice an unknown key into the header, keeping lengths coherent.
    const std::uint32_t header_len = u32_at(good, 8);
    std::string spliced = good;
    spliced.insert(12 + header_len, "mystery = 1\n");
    put_u32(spliced, 8, header_len + 12);
    spit(dir / "unknown.rgnt", spliced);
    CHECK_THROWS_WITH(model::load_model(dir / "unknown.rgnt"),
                      Catch::Matchers::ContainsSubstring("mystery"));
}

TEST_CASE("artifact scoring matches the closed forms", "[model]") {
    const model::ModelArtifact m = identity_artifact(model::Objective::kRegnetKl);
    const Tensor image({1, 1, 2}, {3, 4});
    // Latent equals the input; the statistic is its distance to the
    // authorized center in target units.
    CHECK(model::artifact_score(m, image) == Catch::Approx(5.0));

    const model::ModelArtifact b = identity_artifact(model::Objective::kBaselineBce);
    // Zero weights leave only the bias: sigmoid(ln 3) = 3/4.
    CHECK(model::artifact_score(b, image) == Catch::Approx(0.25));

    CHECK_THROWS_AS(model::artifact_score(m, Tensor::zeros({1, 2})), DimensionError);
    CHECK_THROWS_AS(model::artifact_score(m, Tensor::zeros({1, 1, 3})), DimensionError);
}

TEST_CASE("objective names round trip", "[model]") {
    CHECK(model::objective_from_name("regnet_kl") == model::Objective::kRegnetKl);
    CHECK(model::objective_from_name("baseline_bce") == model::Objective::kBaselineBce);
    CHECK(std::string(model::objective_name(model::Objective::kBaselineBce)) == "baseline_bce");
    CHECK_THROWS_AS(model::objective_from_name("hinge"), ParseError);
}
