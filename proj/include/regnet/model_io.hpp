// SPDX-License-Identifier: Apache-2.0
#pragma once

// Model artifact: everything verification needs in one file.
//
// Binary layout, all integers little-endian uint32:
//   magic "RGNT" | version | header_len | header bytes
//   param_count | per param: name_len, name, rank, extents..., then
//   rank-many extents of float32 little-endian values in row-major
//   order.
// The header is the same "key = value" text the config parser reads;
// training happens in doubles and parameters are stored single-width.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "regnet/decision.hpp"
#include "regnet/encoder.hpp"
#include "regnet/errors.hpp"
#include "regnet/latent_objective.hpp"
#include "regnet/run_config.hpp"
#include "regnet/tensor.hpp"

namespace regnet::model {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class Objective {
    kRegnetKl,
    kBaselineBce,
};

inline const char* objective_name(Objective o) {
    return o == Objective::kRegnetKl ? "regnet_kl" : "baseline_bce";
}

inline Objective objective_from_name(const std::string& name) {
    if (name == "regnet_kl") return Objective::kRegnetKl;
    if (name == "baseline_bce") return Objective::kBaselineBce;
    throw ParseError("unknown objective '" + name + "'");
}

struct TrainingFingerprint {
    std::uint64_t seed = 0;
    std::uint64_t steps = 0;
    double final_loss = 0.0;
};

struct ModelArtifact {
    latent::TargetSpec target;
    enc::EncoderConfig encoder;
    Objective objective = Objective::kRegnetKl;
    enc::EncoderParams params;
    decision::DecisionThreshold threshold;
    TrainingFingerprint fingerprint;
};

// Parameter shapes the artifact must carry: the encoder's parameters,
// plus the logistic classifier head for the baseline objective.
inline std::map<std::string, num::Shape> expected_artifact_shapes(const enc::EncoderConfig& encoder,
                                                                  Objective objective) {
    auto shapes = enc::expected_param_shapes(encoder);
    if (objective == Objective::kBaselineBce) {
        shapes["classifier.weight"] = {encoder.latent_dim, 1};
        shapes["classifier.bias"] = {1};
    }
    return shapes;
}

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw ParseError("model file truncated while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline float read_f32(std::istream& is, const std::string& what) {
    const std::uint32_t bits = read_u32(is, what);
    float v = 0.0f;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline const std::set<std::string>& header_keys() {
    static const std::set<std::string> keys = {
        "objective",          "encoder.arch",         "encoder.input_channels",
        "encoder.input_height", "encoder.input_width", "encoder.blocks",
        "encoder.mlp_widths", "encoder.latent_dim",   "target.d",
        "target.mu_auth",     "target.sigma_auth",    "target.mu_unauth",
        "target.sigma_unauth", "threshold.tau",       "threshold.calibration",
        "threshold.reference", "fingerprint.seed",    "fingerprint.steps",
        "fingerprint.final_loss",
    };
    return keys;
}

inline std::string make_header(const ModelArtifact& m) {
    std::ostringstream os;
    os << "objective = " << objective_name(m.objective) << '\n';
    os << "encoder.arch = " << enc::arch_name(m.encoder.arch) << '\n';
    os << "encoder.input_channels = " << m.encoder.in_channels << '\n';
    os << "encoder.input_height = " << m.encoder.in_height << '\n';
    os << "encoder.input_width = " << m.encoder.in_width << '\n';
    if (m.encoder.arch == enc::ArchKind::kConvResidual) {
        os << "encoder.blocks = " << enc::format_blocks(m.encoder.blocks) << '\n';
    } else if (!m.encoder.mlp_widths.empty()) {
        os << "encoder.mlp_widths = " << enc::format_widths(m.encoder.mlp_widths) << '\n';
    }
    os << "encoder.latent_dim = " << m.encoder.latent_dim << '\n';
    os << "target.d = " << m.target.d << '\n';
    os << "target.mu_auth = " << fmt(m.target.mu_auth) << '\n';
    os << "target.sigma_auth = " << fmt(m.target.sigma_auth) << '\n';
    os << "target.mu_unauth = " << fmt(m.target.mu_unauth) << '\n';
    os << "target.sigma_unauth = " << fmt(m.target.sigma_unauth) << '\n';
    os << "threshold.tau = " << fmt(m.threshold.tau) << '\n';
    os << "threshold.calibration = " << decision::calibration_name(m.threshold.calibration) << '\n';
    os << "threshold.reference = " << fmt(m.threshold.reference) << '\n';
    os << "fingerprint.seed = " << m.fingerprint.seed << '\n';
    os << "fingerprint.steps = " << m.fingerprint.steps << '\n';
    os << "fingerprint.final_loss = " << fmt(m.fingerprint.final_loss) << '\n';
    return os.str();
}

}  // namespace detail

inline void validate_artifact_params(const ModelArtifact& m) {
    const auto expected = expected_artifact_shapes(m.encoder, m.objective);
    for (const auto& [name, shape] : expected) {
        const auto it = m.params.find(name);
        if (it == m.params.end()) {
            throw ParseError("model is missing parameter '" + name + "'");
        }
        if (it->second.shape() != shape) {
            throw ParseError("model parameter '" + name + "' has shape " +
                             num::shape_str(it->second.shape()) + ", configuration expects " +
                             num::shape_str(shape));
        }
    }
    for (const auto& [name, tensor] : m.params) {
        if (!expected.count(name)) {
            throw ParseError("model carries unexpected parameter '" + name + "'");
        }
    }
}

inline void save_model(const ModelArtifact& m, const std::filesystem::path& path) {
    m.encoder.validate();
    m.target.validate();
    if (m.target.d != m.encoder.latent_dim) {
        throw ConfigError("target dimension " + std::to_string(m.target.d) +
                          " does not match encoder latent_dim " + std::to_string(m.encoder.latent_dim));
    }
    validate_artifact_params(m);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write("RGNT", 4);
    detail::write_u32(os, kFormatVersion);
    const std::string header = detail::make_header(m);
    detail::write_u32(os, static_cast<std::uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));

    detail::write_u32(os, static_cast<std::uint32_t>(m.params.size()));
    for (const auto& [name, tensor] : m.params) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t e : tensor.shape()) detail::write_u32(os, static_cast<std::uint32_t>(e));
        for (double v : tensor.values()) detail::write_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("failed writing " + path.string());
}

inline ModelArtifact load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::string(magic, 4) != "RGNT") {
        throw ParseError(path.string() + " is not a model file (bad magic)");
    }
    const std::uint32_t version = detail::read_u32(is, "format version");
    if (version != kFormatVersion) {
        throw ParseError(path.string() + " uses model format version " + std::to_string(version) +
                         "; this build reads version " + std::to_string(kFormatVersion));
    }
    const std::uint32_t header_len = detail::read_u32(is, "header length");
    std::string header(header_len, '\0');
    is.read(header.data(), header_len);
    if (is.gcount() != static_cast<std::streamsize>(header_len)) {
        throw ParseError(path.string() + ": truncated header");
    }

    const auto kv = cfg::RunConfig::parse_string(header, path.string() + " header");
    kv.reject_unknown(detail::header_keys());

    ModelArtifact m;
    m.objective = objective_from_name(kv.str("objective"));
    m.encoder.arch = enc::arch_from_name(kv.str("encoder.arch"));
    m.encoder.in_channels = kv.uint("encoder.input_channels");
    m.encoder.in_height = kv.uint("encoder.input_height");
    m.encoder.in_width = kv.uint("encoder.input_width");
    if (m.encoder.arch == enc::ArchKind::kConvResidual) {
        m.encoder.blocks = enc::parse_blocks(kv.str("encoder.blocks"));
    } else {
        m.encoder.mlp_widths = enc::parse_widths(kv.str_or("encoder.mlp_widths", ""));
    }
    m.encoder.latent_dim = kv.uint("encoder.latent_dim");
    m.target.d = kv.uint("target.d");
    m.target.mu_auth = kv.number("target.mu_auth");
    m.target.sigma_auth = kv.number("target.sigma_auth");
    m.target.mu_unauth = kv.number("target.mu_unauth");
    m.target.sigma_unauth = kv.number("target.sigma_unauth");
    m.threshold.tau = kv.number("threshold.tau");
    m.threshold.calibration = decision::calibration_from_name(kv.str("threshold.calibration"));
    m.threshold.reference = kv.number("threshold.reference");
    m.fingerprint.seed = kv.uint("fingerprint.seed");
    m.fingerprint.steps = kv.uint("fingerprint.steps");
    m.fingerprint.final_loss = kv.number("fingerprint.final_loss");
    m.encoder.validate();
    m.target.validate();
    if (m.target.d != m.encoder.latent_dim) {
        throw ParseError(path.string() + ": target dimension disagrees with encoder latent_dim");
    }

    const std::uint32_t count = detail::read_u32(is, "parameter count");
    for (std::uint32_t p = 0; p < count; ++p) {
        const std::uint32_t name_len = detail::read_u32(is, "parameter name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (is.gcount() != static_cast<std::streamsize>(name_len)) {
            throw ParseError(path.string() + ": truncated parameter name");
        }
        const std::uint32_t rank = detail::read_u32(is, "parameter rank");
        num::Shape shape(rank);
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape[r] = detail::read_u32(is, "parameter extent");
            n *= shape[r];
        }
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) {
            values[i] = static_cast<double>(detail::read_f32(is, "parameter value"));
        }
        m.params.emplace(std::move(name), num::Tensor(std::move(shape), std::move(values),
                                                      /*requires_grad=*/true));
    }
    validate_artifact_params(m);
    return m;
}

// Decision score of one [c,h,w] image under the artifact's objective:
// the latent-norm statistic for the distribution-matching objective, or
// one minus the classifier's sigmoid for the baseline. Either way,
// lower means more authorized-like and the artifact threshold applies
// directly.
inline double artifact_score(const ModelArtifact& m, const num::Tensor& image) {
    if (image.rank() != 3) {
        throw DimensionError("artifact_score expects [c,h,w], got " + num::shape_str(image.shape()));
    }
    num::Tensor batch({1, image.shape()[0], image.shape()[1], image.shape()[2]}, image.values());
    const num::Tensor z = enc::forward(m.encoder, m.params, batch);
    if (m.objective == Objective::kRegnetKl) {
        return decision::statistic(z.values(), m.target);
    }
    const num::Tensor logits = num::add(num::matmul(z, m.params.at("classifier.weight")),
                                        m.params.at("classifier.bias"));
    return 1.0 - num::sigmoid(logits.item());
}

}  // namespace regnet::model
