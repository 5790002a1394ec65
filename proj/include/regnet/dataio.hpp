// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic identity data, enrollment splits, and on-disk datasets.
//
// Every identity gets a smooth template image (a sum of eight
// random-frequency 2-D sinusoids, min-max normalized to [0,1]); each
// sample applies an integer shift with zero fill, a uniform
// illumination factor, and additive Gaussian noise, then clamps back
// to [0,1]. All randomness flows from one seeded generator consumed in
// a fixed order, so a (params, seed) pair reproduces the pool
// bit-identically.
//
// Disk format: a dataset directory holds manifest.txt with lines
//   <relative_file> <identity_id> <label>
// and one image file per sample. An image file is a single header line
//   P5-like: <w> <h> <c>
// followed by c*h*w bytes, the tensor's row-major [c,h,w] order, each
// byte round(255 * intensity).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "regnet/errors.hpp"
#include "regnet/tensor.hpp"

namespace regnet::dataio {

struct SynthParams {
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t channels = 1;
    std::size_t identities = 10;
    std::size_t samples_per_identity = 40;
    int shift_max = 2;
    double illumination_lo = 0.8;
    double illumination_hi = 1.2;
    double noise_sigma = 0.05;
    std::uint64_t seed = 1;

    void validate() const {
        if (height < 1 || width < 1 || channels < 1) {
            throw ConfigError("synthetic image extents must be positive");
        }
        if (identities < 1 || samples_per_identity < 1) {
            throw ConfigError("synthetic pool needs at least one identity and one sample");
        }
        if (shift_max < 0) throw ConfigError("shift_max must be >= 0");
        if (!(illumination_lo > 0.0) || illumination_hi < illumination_lo) {
            throw ConfigError("illumination range must satisfy 0 < lo <= hi");
        }
        if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    }
};

struct Identity {
    int id = 0;
    num::Tensor template_image;        // [c,h,w] in [0,1]
    std::vector<num::Tensor> samples;  // [c,h,w] in [0,1]
};

struct IdentityPool {
    SynthParams params;
    std::vector<Identity> identities;
};

namespace detail {

inline constexpr int kSinusoids = 8;

inline num::Tensor make_template(const SynthParams& p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> amp(0.5, 1.0);
    std::uniform_real_distribution<double> freq(0.5, 4.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

    std::vector<double> v(p.channels * p.height * p.width, 0.0);
    for (std::size_t c = 0; c < p.channels; ++c) {
        for (int k = 0; k < kSinusoids; ++k) {
            const double a = amp(rng);
            const double fx = freq(rng);
            const double fy = freq(rng);
            const double ph = phase(rng);
            for (std::size_t y = 0; y < p.height; ++y) {
                for (std::size_t x = 0; x < p.width; ++x) {
                    const double arg = 2.0 * std::numbers::pi *
                                           (fx * static_cast<double>(x) / static_cast<double>(p.width) +
                                            fy * static_cast<double>(y) / static_cast<double>(p.height)) +
                                       ph;
                    v[(c * p.height + y) * p.width + x] += a * std::sin(arg);
                }
            }
        }
    }
    double mn = v[0], mx = v[0];
    for (double x : v) {
        mn = std::min(mn, x);
        mx = std::max(mx, x);
    }
    if (mx == mn) {
        for (double& x : v) x = 0.5;
    } else {
        for (double& x : v) x = (x - mn) / (mx - mn);
    }
    return num::Tensor({p.channels, p.height, p.width}, std::move(v));
}

inline num::Tensor make_sample(const SynthParams& p, const num::Tensor& tpl, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> shift(-p.shift_max, p.shift_max);
    const int dy = shift(rng);
    const int dx = shift(rng);
    std::uniform_real_distribution<double> illum(p.illumination_lo, p.illumination_hi);
    const double m = illum(rng);
    std::normal_distribution<double> noise(0.0, p.noise_sigma);

    std::vector<double> v(tpl.size(), 0.0);
    const auto h = static_cast<long>(p.height);
    const auto w = static_cast<long>(p.width);
    for (std::size_t c = 0; c < p.channels; ++c) {
        for (long y = 0; y < h; ++y) {
            for (long x = 0; x < w; ++x) {
                const long sy = y - dy;
                const long sx = x - dx;
                double val = 0.0;
                if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
                    val = tpl.values()[(c * p.height + static_cast<std::size_t>(sy)) * p.width +
                                       static_cast<std::size_t>(sx)];
                }
                val = val * m + (p.noise_sigma > 0.0 ? noise(rng) : 0.0);
                val = std::min(1.0, std::max(0.0, val));
                v[(c * p.height + static_cast<std::size_t>(y)) * p.width + static_cast<std::size_t>(x)] = val;
            }
        }
    }
    return num::Tensor({p.channels, p.height, p.width}, std::move(v));
}

}  // namespace detail

inline IdentityPool generate_synthetic(const SynthParams& params) {
    params.validate();
    std::mt19937_64 rng(params.seed);
    IdentityPool pool;
    pool.params = params;
    pool.identities.reserve(params.identities);
    for (std::size_t i = 0; i < params.identities; ++i) {
        Identity ident;
        ident.id = static_cast<int>(i);
        ident.template_image = detail::make_template(params, rng);
        ident.samples.reserve(params.samples_per_identity);
        for (std::size_t s = 0; s < params.samples_per_identity; ++s) {
            ident.samples.push_back(detail::make_sample(params, ident.template_image, rng));
        }
        pool.identities.push_back(std::move(ident));
    }
    return pool;
}

struct LabeledSample {
    num::Tensor image;   // [c,h,w]
    int identity_id = 0;
    int label = 0;       // 1 = authorized
};

enum class SplitTag { kTrain, kCalib, kTest };

struct Dataset {
    std::vector<LabeledSample> samples;
    SplitTag split = SplitTag::kTrain;
};

struct EnrollmentSplit {
    Dataset train;
    Dataset calib;
    Dataset test;
    // True when holdout_unauth == 0: the test impostors were all seen
    // during training, which weakens the protocol.
    bool degenerate_protocol = false;
};

// Enrollment protocol:
//  - the authorized identity's samples are split train/test by
//    train_fraction (seeded shuffle)
//  - the holdout_unauth highest unauthorized identity ids appear only
//    in test (unseen impostors); the remaining unauthorized identities
//    contribute all samples to training
//  - calib_fraction of the training samples of each class moves to the
//    calibration split and never receives gradient steps
// With holdout_unauth == 0 the unauthorized identities are instead
// sample-split like the authorized one and the result is flagged
// degenerate. The three splits partition the pool exactly.
inline EnrollmentSplit make_enrollment(const IdentityPool& pool, int authorized_id,
                                       std::size_t holdout_unauth, double calib_fraction,
                                       double train_fraction = 0.75, std::uint64_t seed = 1) {
    if (!(calib_fraction >= 0.0 && calib_fraction < 1.0)) {
        throw ConfigError("calib_fraction must lie in [0,1)");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train_fraction must lie in (0,1)");
    }
    const Identity* auth = nullptr;
    std::vector<const Identity*> unauth;
    for (const Identity& ident : pool.identities) {
        if (ident.id == authorized_id) {
            auth = &ident;
        } else {
            unauth.push_back(&ident);
        }
    }
    if (!auth) throw ConfigError("authorized identity " + std::to_string(authorized_id) + " not in pool");
    if (holdout_unauth > unauth.size()) {
        throw ConfigError("holdout_unauth " + std::to_string(holdout_unauth) + " exceeds the " +
                          std::to_string(unauth.size()) + " unauthorized identities");
    }
    if (holdout_unauth == unauth.size() && !unauth.empty()) {
        throw ConfigError("holding out every unauthorized identity leaves none for training");
    }
    if (unauth.empty()) throw ConfigError("pool has no unauthorized identities");

    std::mt19937_64 rng(seed);

    auto split_indices = [&](std::size_t n, double frac) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_first = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
        return std::pair{std::vector<std::size_t>(idx.begin(), idx.begin() + n_first),
                         std::vector<std::size_t>(idx.begin() + n_first, idx.end())};
    };

    EnrollmentSplit out;
    out.train.split = SplitTag::kTrain;
    out.calib.split = SplitTag::kCalib;
    out.test.split = SplitTag::kTest;
    out.degenerate_protocol = holdout_unauth == 0;

    auto push = [](Dataset& ds, const Identity& ident, std::size_t sample_idx, int label) {
        ds.samples.push_back(LabeledSample{ident.samples[sample_idx], ident.id, label});
    };

    // Authorized: train/test sample split, then calibration carve from
    // the train side.
    {
        auto [train_idx, test_idx] = split_indices(auth->samples.size(), train_fraction);
        const auto n_calib =
            static_cast<std::size_t>(std::llround(calib_fraction * static_cast<double>(train_idx.size())));
        for (std::size_t i = 0; i < train_idx.size(); ++i) {
            const bool to_calib = i + n_calib >= train_idx.size();
            push(to_calib ? out.calib : out.train, *auth, train_idx[i], 1);
        }
        for (std::size_t i : test_idx) push(out.test, *auth, i, 1);
    }

    // Unauthorized identities in ascending id order; the highest
    // holdout_unauth ids are unseen impostors.
    std::sort(unauth.begin(), unauth.end(),
              [](const Identity* a, const Identity* b) { return a->id < b->id; });
    const std::size_t n_seen = unauth.size() - holdout_unauth;

    std::vector<std::pair<const Identity*, std::size_t>> unauth_train;
    for (std::size_t u = 0; u < unauth.size(); ++u) {
        const Identity& ident = *unauth[u];
        if (u < n_seen) {
            if (holdout_unauth == 0) {
                auto [train_idx, test_idx] = split_indices(ident.samples.size(), train_fraction);
                for (std::size_t i : train_idx) unauth_train.emplace_back(&ident, i);
                for (std::size_t i : test_idx) push(out.test, ident, i, 0);
            } else {
                for (std::size_t i = 0; i < ident.samples.size(); ++i) unauth_train.emplace_back(&ident, i);
            }
        } else {
            for (std::size_t i = 0; i < ident.samples.size(); ++i) push(out.test, ident, i, 0);
        }
    }
    const auto n_calib_u =
        static_cast<std::size_t>(std::llround(calib_fraction * static_cast<double>(unauth_train.size())));
    {
        // Carve a random calibration subset of the unauthorized
        // training samples.
        std::vector<std::size_t> idx(unauth_train.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        std::set<std::size_t> calib_set(idx.begin(), idx.begin() + n_calib_u);
        for (std::size_t i = 0; i < unauth_train.size(); ++i) {
            push(calib_set.count(i) ? out.calib : out.train, *unauth_train[i].first, unauth_train[i].second,
                 0);
        }
    }

    if (out.train.samples.empty()) throw DegenerateDatasetError("enrollment train split is empty");
    return out;
}

// Number of distinct crop placements: (h - crop_h + 1) * (w - crop_w + 1).
inline std::size_t crop_factor(std::size_t h, std::size_t w, std::size_t crop_h, std::size_t crop_w) {
    if (crop_h < 1 || crop_w < 1 || crop_h > h || crop_w > w) {
        throw DimensionError("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                             " does not fit in " + std::to_string(h) + "x" + std::to_string(w));
    }
    return (h - crop_h + 1) * (w - crop_w + 1);
}

// Uniformly random top-left placement; full-size crop is the identity.
inline num::Tensor random_crop(const num::Tensor& image, std::size_t crop_h, std::size_t crop_w,
                               std::mt19937_64& rng) {
    if (image.rank() != 3) {
        throw DimensionError("random_crop expects [c,h,w], got " + num::shape_str(image.shape()));
    }
    const std::size_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
    crop_factor(h, w, crop_h, crop_w);  // validates fit
    std::uniform_int_distribution<std::size_t> dy(0, h - crop_h);
    std::uniform_int_distribution<std::size_t> dx(0, w - crop_w);
    const std::size_t oy = dy(rng);
    const std::size_t ox = dx(rng);
    std::vector<double> v(c * crop_h * crop_w);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < crop_h; ++y)
            for (std::size_t x = 0; x < crop_w; ++x)
                v[(ci * crop_h + y) * crop_w + x] = image.values()[(ci * h + oy + y) * w + ox + x];
    return num::Tensor({c, crop_h, crop_w}, std::move(v));
}

// ---------------------------------------------------------------------------
// disk format

inline void save_image(const num::Tensor& img, const std::filesystem::path& path) {
    if (img.rank() != 3) {
        throw DimensionError("save_image expects [c,h,w], got " + num::shape_str(img.shape()));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "P5-like: " << img.shape()[2] << ' ' << img.shape()[1] << ' ' << img.shape()[0] << '\n';
    std::vector<unsigned char> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const long q = std::lround(255.0 * img.values()[i]);
        bytes[i] = static_cast<unsigned char>(std::min(255L, std::max(0L, q)));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

inline num::Tensor load_image(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::string header;
    if (!std::getline(is, header)) throw ParseError(path.string() + ": missing image header");
    std::istringstream hs(header);
    std::string magic;
    std::size_t w = 0, h = 0, c = 0;
    hs >> magic >> w >> h >> c;
    if (magic != "P5-like:" || hs.fail() || w < 1 || h < 1 || c < 1) {
        throw ParseError(path.string() + ": malformed image header '" + header + "'");
    }
    std::vector<unsigned char> bytes(c * h * w);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw ParseError(path.string() + ": truncated image payload");
    }
    std::vector<double> v(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = static_cast<double>(bytes[i]) / 255.0;
    return num::Tensor({c, h, w}, std::move(v));
}

// Writes manifest.txt plus one image file per sample, named by sample
// index; the layout is a pure function of the dataset, so saving the
// same dataset twice yields byte-identical directories.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string());
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw IoError("cannot open " + (dir / "manifest.txt").string() + " for writing");
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        std::ostringstream name;
        name << 's' << std::setw(5) << std::setfill('0') << i << ".raw";
        save_image(ds.samples[i].image, dir / name.str());
        manifest << name.str() << ' ' << ds.samples[i].identity_id << ' ' << ds.samples[i].label << '\n';
    }
    if (!manifest) throw IoError("failed writing manifest in " + dir.string());
}

inline Dataset load_dataset(const std::filesystem::path& dir, SplitTag tag) {
    const auto manifest_path = dir / "manifest.txt";
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open " + manifest_path.string());
    Dataset ds;
    ds.split = tag;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string file;
        int identity = 0, label = 0;
        ls >> file >> identity >> label;
        std::string extra;
        if (ls.fail() || (ls >> extra)) {
            throw ParseError(manifest_path.string() + ": malformed manifest line " + std::to_string(line_no));
        }
        if (label != 0 && label != 1) {
            throw ParseError(manifest_path.string() + ": label must be 0 or 1 on line " +
                             std::to_string(line_no));
        }
        if (!seen.insert(file).second) {
            throw ParseError(manifest_path.string() + ": duplicate file '" + file + "' on line " +
                             std::to_string(line_no));
        }
        ds.samples.push_back(LabeledSample{load_image(dir / file), identity, label});
    }
    if (ds.samples.empty()) {
        throw DegenerateDatasetError(manifest_path.string() + ": dataset has no samples");
    }
    return ds;
}

}  // namespace regnet::dataio
