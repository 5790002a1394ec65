// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic encoder mapping image batches to latent vectors.
//
// Two architectures share one parameter-map representation:
//  - conv_residual: stacked 3x3 conv blocks (stride 1 or 2, optional
//    residual skip, 1x1 projection where the skip shape differs),
//    global average pooling, dense head to the latent dimension
//  - mlp: flatten, dense+relu hidden layers, dense head
//
// Parameters live in a name-sorted map; initialization draws every
// weight from the seeded He distribution (variance 2 / fan_in) in a
// fixed canonical order, biases start at zero. No normalization layers
// anywhere: the objective constrains the output distribution directly.

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "regnet/errors.hpp"
#include "regnet/tensor.hpp"

namespace regnet::enc {

enum class ArchKind {
    kConvResidual,
    kMlp,
};

inline const char* arch_name(ArchKind a) {
    return a == ArchKind::kConvResidual ? "conv_residual" : "mlp";
}

inline ArchKind arch_from_name(const std::string& name) {
    if (name == "conv_residual") return ArchKind::kConvResidual;
    if (name == "mlp") return ArchKind::kMlp;
    throw ParseError("unknown encoder architecture '" + name + "'");
}

struct ConvBlock {
    std::size_t filters = 0;
    int stride = 1;
    bool residual = false;
};

struct EncoderConfig {
    ArchKind arch = ArchKind::kConvResidual;
    std::size_t in_channels = 1;
    std::size_t in_height = 0;
    std::size_t in_width = 0;
    std::vector<ConvBlock> blocks;          // conv_residual only
    std::vector<std::size_t> mlp_widths;    // mlp only; may be empty
    std::size_t latent_dim = 3;

    void validate() const {
        if (in_channels < 1 || in_height < 1 || in_width < 1) {
            throw ConfigError("encoder input shape must have positive extents");
        }
        if (latent_dim < 1) throw ConfigError("encoder latent_dim must be >= 1");
        if (arch == ArchKind::kConvResidual) {
            if (blocks.empty()) throw ConfigError("conv_residual encoder needs at least one block");
            for (const ConvBlock& b : blocks) {
                if (b.filters < 1) throw ConfigError("conv block filter count must be >= 1");
                if (b.stride != 1 && b.stride != 2) {
                    throw ConfigError("conv block stride must be 1 or 2, got " + std::to_string(b.stride));
                }
            }
        }
    }

    // Four stride-2 residual blocks with filters 8, 16, 32, 64; the
    // default configuration for small grayscale inputs.
    static EncoderConfig desk(std::size_t channels, std::size_t height, std::size_t width,
                              std::size_t latent_dim = 3) {
        EncoderConfig cfg;
        cfg.arch = ArchKind::kConvResidual;
        cfg.in_channels = channels;
        cfg.in_height = height;
        cfg.in_width = width;
        cfg.blocks = {{8, 2, true}, {16, 2, true}, {32, 2, true}, {64, 2, true}};
        cfg.latent_dim = latent_dim;
        return cfg;
    }
};

// Text forms used by config files and model headers: blocks as
// "<filters>s<stride>[r]" joined by commas, widths as plain comma list.
inline std::string format_blocks(const std::vector<ConvBlock>& blocks) {
    std::ostringstream os;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (i) os << ',';
        os << blocks[i].filters << 's' << blocks[i].stride;
        if (blocks[i].residual) os << 'r';
    }
    return os.str();
}

inline std::vector<ConvBlock> parse_blocks(const std::string& text) {
    std::vector<ConvBlock> out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        const auto s_pos = item.find('s');
        if (s_pos == std::string::npos || s_pos == 0) {
            throw ParseError("malformed conv block spec '" + item + "'");
        }
        ConvBlock b;
        try {
            b.filters = std::stoul(item.substr(0, s_pos));
            std::string rest = item.substr(s_pos + 1);
            if (!rest.empty() && rest.back() == 'r') {
                b.residual = true;
                rest.pop_back();
            }
            std::size_t used = 0;
            b.stride = std::stoi(rest, &used);
            if (used != rest.size() || rest.empty()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ParseError("malformed conv block spec '" + item + "'");
        }
        out.push_back(b);
    }
    if (out.empty()) throw ParseError("empty conv block list");
    return out;
}

inline std::string format_widths(const std::vector<std::size_t>& widths) {
    std::ostringstream os;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (i) os << ',';
        os << widths[i];
    }
    return os.str();
}

inline std::vector<std::size_t> parse_widths(const std::string& text) {
    std::vector<std::size_t> out;
    if (text.empty()) return out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoul(item, &used));
            if (used != item.size() || item.empty()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ParseError("malformed width list entry '" + item + "'");
        }
    }
    return out;
}

using EncoderParams = std::map<std::string, num::Tensor>;

namespace detail {

inline bool needs_projection(const ConvBlock& b, std::size_t c_in) {
    return b.residual && (b.stride != 1 || c_in != b.filters);
}

}  // namespace detail

// Name -> shape of every parameter the configuration defines.
inline std::map<std::string, num::Shape> expected_param_shapes(const EncoderConfig& cfg) {
    cfg.validate();
    std::map<std::string, num::Shape> shapes;
    if (cfg.arch == ArchKind::kConvResidual) {
        std::size_t c = cfg.in_channels;
        for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
            const ConvBlock& b = cfg.blocks[i];
            const std::string prefix = "block" + std::to_string(i);
            shapes[prefix + ".conv.weight"] = {b.filters, c, 3, 3};
            shapes[prefix + ".conv.bias"] = {b.filters};
            if (detail::needs_projection(b, c)) {
                shapes[prefix + ".proj.weight"] = {b.filters, c, 1, 1};
            }
            c = b.filters;
        }
        shapes["head.weight"] = {c, cfg.latent_dim};
        shapes["head.bias"] = {cfg.latent_dim};
    } else {
        std::size_t in = cfg.in_channels * cfg.in_height * cfg.in_width;
        for (std::size_t i = 0; i < cfg.mlp_widths.size(); ++i) {
            const std::string prefix = "fc" + std::to_string(i);
            shapes[prefix + ".weight"] = {in, cfg.mlp_widths[i]};
            shapes[prefix + ".bias"] = {cfg.mlp_widths[i]};
            in = cfg.mlp_widths[i];
        }
        shapes["head.weight"] = {in, cfg.latent_dim};
        shapes["head.bias"] = {cfg.latent_dim};
    }
    return shapes;
}

inline std::size_t count_params(const EncoderConfig& cfg) {
    std::size_t total = 0;
    for (const auto& [name, shape] : expected_param_shapes(cfg)) {
        total += num::shape_size(shape);
    }
    return total;
}

namespace detail {

inline num::Tensor he_tensor(num::Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<double> v(num::shape_size(shape));
    for (double& x : v) x = dist(rng);
    return num::Tensor(std::move(shape), std::move(v), /*requires_grad=*/true);
}

}  // namespace detail

// Seeded He initialization. Weights are drawn in a fixed canonical
// order (blocks or layers first to last, projection after its conv,
// head last), so a given (config, seed) pair always yields bit-identical
// parameters. Biases are exactly zero.
inline EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed) {
    const auto shapes = expected_param_shapes(cfg);
    std::mt19937_64 rng(seed);
    EncoderParams params;

    auto emit_weight = [&](const std::string& name, std::size_t fan_in) {
        params[name] = detail::he_tensor(shapes.at(name), fan_in, rng);
    };
    auto emit_bias = [&](const std::string& name) {
        params[name] = num::Tensor::zeros(shapes.at(name), /*requires_grad=*/true);
    };

    if (cfg.arch == ArchKind::kConvResidual) {
        std::size_t c = cfg.in_channels;
        for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
            const ConvBlock& b = cfg.blocks[i];
            const std::string prefix = "block" + std::to_string(i);
            emit_weight(prefix + ".conv.weight", c * 9);
            emit_bias(prefix + ".conv.bias");
            if (detail::needs_projection(b, c)) {
                emit_weight(prefix + ".proj.weight", c);
            }
            c = b.filters;
        }
        emit_weight("head.weight", c);
        emit_bias("head.bias");
    } else {
        std::size_t in = cfg.in_channels * cfg.in_height * cfg.in_width;
        for (std::size_t i = 0; i < cfg.mlp_widths.size(); ++i) {
            const std::string prefix = "fc" + std::to_string(i);
            emit_weight(prefix + ".weight", in);
            emit_bias(prefix + ".bias");
            in = cfg.mlp_widths[i];
        }
        emit_weight("head.weight", in);
        emit_bias("head.bias");
    }
    return params;
}

namespace detail {

inline const num::Tensor& param(const EncoderParams& params, const std::string& name) {
    const auto it = params.find(name);
    if (it == params.end()) throw ContractError("missing encoder parameter '" + name + "'");
    return it->second;
}

}  // namespace detail

// Batch forward pass: x is [b, c, h, w] matching the configured input
// shape; the result is [b, latent_dim]. Rows are processed
// independently (no cross-sample coupling), so per-row outputs do not
// depend on batch composition.
inline num::Tensor forward(const EncoderConfig& cfg, const EncoderParams& params, const num::Tensor& x,
                           num::Graph* g = nullptr) {
    cfg.validate();
    if (x.rank() != 4 || x.shape()[1] != cfg.in_channels || x.shape()[2] != cfg.in_height ||
        x.shape()[3] != cfg.in_width) {
        throw DimensionError("encoder input " + num::shape_str(x.shape()) + " does not match configured (" +
                             std::to_string(cfg.in_channels) + "," + std::to_string(cfg.in_height) + "," +
                             std::to_string(cfg.in_width) + ")");
    }

    if (cfg.arch == ArchKind::kConvResidual) {
        num::Tensor h = x;
        std::size_t c = cfg.in_channels;
        for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
            const ConvBlock& b = cfg.blocks[i];
            const std::string prefix = "block" + std::to_string(i);
            num::Tensor y = num::conv2d(h, detail::param(params, prefix + ".conv.weight"), b.stride, g);
            y = num::add_channel_bias(y, detail::param(params, prefix + ".conv.bias"), g);
            if (b.residual) {
                if (detail::needs_projection(b, c)) {
                    num::Tensor skip =
                        num::conv2d(h, detail::param(params, prefix + ".proj.weight"), b.stride, g);
                    y = num::add(y, skip, g);
                } else {
                    y = num::add(y, h, g);
                }
            }
            h = num::relu(y, g);
            c = b.filters;
        }
        num::Tensor pooled = num::global_avg_pool(h, g);
        num::Tensor out = num::matmul(pooled, detail::param(params, "head.weight"), g);
        return num::add(out, detail::param(params, "head.bias"), g);
    }

    const std::size_t n = cfg.in_channels * cfg.in_height * cfg.in_width;
    num::Tensor h = num::reshape(x, {x.shape()[0], n}, g);
    for (std::size_t i = 0; i < cfg.mlp_widths.size(); ++i) {
        const std::string prefix = "fc" + std::to_string(i);
        h = num::matmul(h, detail::param(params, prefix + ".weight"), g);
        h = num::add(h, detail::param(params, prefix + ".bias"), g);
        h = num::relu(h, g);
    }
    num::Tensor out = num::matmul(h, detail::param(params, "head.weight"), g);
    return num::add(out, detail::param(params, "head.bias"), g);
}

}  // namespace regnet::enc
