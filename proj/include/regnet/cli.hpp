// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command implementations behind the regnet binary. Each command is
// an ordinary function over paths and streams so tests can drive it
// in-process; the executable only parses argv and dispatches.
//
// Exit codes: 0 success or accept, 1 reject, 2 usage/config/data
// error, 3 training divergence.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include "regnet/dataio.hpp"
#include "regnet/decision.hpp"
#include "regnet/encoder.hpp"
#include "regnet/errors.hpp"
#include "regnet/metrics.hpp"
#include "regnet/model_io.hpp"
#include "regnet/run_config.hpp"
#include "regnet/scoring.hpp"
#include "regnet/trainer.hpp"

namespace regnet::cli {

constexpr int kExitSuccess = 0;
constexpr int kExitAccept = 0;
constexpr int kExitReject = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

namespace detail {

// Maps exceptions to the exit-code contract. Rejection is not an
// exception; commands return it directly.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const TrainingDivergedError& e) {
        err << "error: " << e.what() << '\n';
        if (!e.last_telemetry().empty()) {
            err << "last telemetry: " << e.last_telemetry() << '\n';
        }
        return kExitDiverged;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

inline const std::set<std::string>& gen_data_keys() {
    static const std::set<std::string> keys = {
        "data.height",          "data.width",
        "data.channels",        "data.identities",
        "data.samples_per_identity", "data.shift_max",
        "data.illumination_lo", "data.illumination_hi",
        "data.noise_sigma",     "data.seed",
        "data.authorized_id",   "data.holdout_unauth",
        "data.calib_fraction",  "data.train_fraction",
        "data.split_seed",
    };
    return keys;
}

inline const std::set<std::string>& enroll_keys() {
    static const std::set<std::string> keys = {
        "objective",
        "encoder.arch",
        "encoder.blocks",
        "encoder.mlp_widths",
        "encoder.latent_dim",
        "target.d",
        "target.mu_auth",
        "target.sigma_auth",
        "target.mu_unauth",
        "target.sigma_unauth",
        "train.steps",
        "train.batch_size",
        "train.learning_rate",
        "train.beta1",
        "train.beta2",
        "train.adam_eps",
        "train.mixup_alpha",
        "train.auth_fraction",
        "train.crop_height",
        "train.crop_width",
        "train.calibration_far",
        "train.telemetry_every",
        "train.seed",
    };
    return keys;
}

inline dataio::SynthParams synth_from_config(const cfg::RunConfig& c) {
    dataio::SynthParams p;
    p.height = c.uint_or("data.height", p.height);
    p.width = c.uint_or("data.width", p.width);
    p.channels = c.uint_or("data.channels", p.channels);
    p.identities = c.uint_or("data.identities", p.identities);
    p.samples_per_identity = c.uint_or("data.samples_per_identity", p.samples_per_identity);
    p.shift_max = c.uint_or("data.shift_max", p.shift_max);
    p.illumination_lo = c.number_or("data.illumination_lo", p.illumination_lo);
    p.illumination_hi = c.number_or("data.illumination_hi", p.illumination_hi);
    p.noise_sigma = c.number_or("data.noise_sigma", p.noise_sigma);
    p.seed = c.uint_or("data.seed", p.seed);
    return p;
}

inline latent::TargetSpec target_from_config(const cfg::RunConfig& c) {
    latent::TargetSpec t;
    t.d = c.uint_or("target.d", t.d);
    t.mu_auth = c.number_or("target.mu_auth", t.mu_auth);
    t.sigma_auth = c.number_or("target.sigma_auth", t.sigma_auth);
    t.mu_unauth = c.number_or("target.mu_unauth", t.mu_unauth);
    t.sigma_unauth = c.number_or("target.sigma_unauth", t.sigma_unauth);
    return t;
}

inline train::TrainConfig train_from_config(const cfg::RunConfig& c) {
    train::TrainConfig t;
    t.steps = c.uint_or("train.steps", t.steps);
    t.batch_size = c.uint_or("train.batch_size", t.batch_size);
    t.learning_rate = c.number_or("train.learning_rate", t.learning_rate);
    t.beta1 = c.number_or("train.beta1", t.beta1);
    t.beta2 = c.number_or("train.beta2", t.beta2);
    t.adam_eps = c.number_or("train.adam_eps", t.adam_eps);
    t.mixup_alpha = c.number_or("train.mixup_alpha", t.mixup_alpha);
    t.auth_fraction = c.number_or("train.auth_fraction", t.auth_fraction);
    t.calibration_far = c.number_or("train.calibration_far", t.calibration_far);
    t.telemetry_every = c.uint_or("train.telemetry_every", t.telemetry_every);
    t.seed = c.uint_or("train.seed", t.seed);
    const bool has_ch = c.has("train.crop_height");
    const bool has_cw = c.has("train.crop_width");
    if (has_ch != has_cw) {
        throw ConfigError("train.crop_height and train.crop_width must be set together");
    }
    if (has_ch) t.crop = {c.uint("train.crop_height"), c.uint("train.crop_width")};
    return t;
}

// Builds the encoder configuration, taking input dimensions from the
// training data (or from the crop when cropping is configured).
inline enc::EncoderConfig encoder_from_config(const cfg::RunConfig& c,
                                              const latent::TargetSpec& target,
                                              const train::TrainConfig& tcfg,
                                              const num::Shape& sample_shape) {
    if (sample_shape.size() != 3) {
        throw DimensionError("training images must be rank-3 [channels, height, width]");
    }
    enc::EncoderConfig e = enc::EncoderConfig::desk(sample_shape[0], sample_shape[1],
                                                    sample_shape[2], target.d);
    if (tcfg.crop) {
        e.in_height = tcfg.crop->first;
        e.in_width = tcfg.crop->second;
    }
    e.arch = enc::arch_from_name(c.str_or("encoder.arch", enc::arch_name(e.arch)));
    e.latent_dim = c.uint_or("encoder.latent_dim", target.d);
    if (c.has("encoder.blocks")) e.blocks = enc::parse_blocks(c.str("encoder.blocks"));
    if (c.has("encoder.mlp_widths")) e.mlp_widths = enc::parse_widths(c.str("encoder.mlp_widths"));
    return e;
}

inline std::string percent(double fraction) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << 100.0 * fraction;
    return os.str();
}

// The four report quantities, formatted once so the file and any echo
// stay bit-identical.
inline std::string format_report(const metrics::ScoreSet& scores) {
    const metrics::EerResult e = metrics::eer(scores);
    const double gar1 = metrics::gar_at_far(scores, 1e-1);
    const double gar2 = metrics::gar_at_far(scores, 1e-2);
    const double acc = metrics::accuracy_at_eer(scores);
    std::ostringstream os;
    os << "EER% = " << percent(e.eer) << '\n';
    os << "GAR@10^-1FAR% = " << percent(gar1) << '\n';
    os << "GAR@10^-2FAR% = " << percent(gar2) << '\n';
    os << "Accuracy@EER% = " << percent(acc) << '\n';
    return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
    if (!os) throw IoError("failed while writing " + path.string());
}

template <typename Fn>
void write_stream(const std::filesystem::path& path, Fn&& fn) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    fn(os);
    if (!os) throw IoError("failed while writing " + path.string());
}

}  // namespace detail

// gen-data: synthesizes an identity pool, carves the enrollment
// protocol splits, and writes train/, calib/, test/ dataset
// directories under out_dir.
inline int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                        std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&]() {
        const cfg::RunConfig c = cfg::RunConfig::parse_file(config_path);
        c.reject_unknown(detail::gen_data_keys());
        const dataio::SynthParams params = detail::synth_from_config(c);
        const int authorized_id = static_cast<int>(c.integer_or("data.authorized_id", 0));
        const std::size_t holdout = c.uint_or("data.holdout_unauth", 3);
        const double calib_fraction = c.number_or("data.calib_fraction", 0.2);
        const double train_fraction = c.number_or("data.train_fraction", 0.75);
        const std::uint64_t split_seed = c.uint_or("data.split_seed", 1);

        const dataio::IdentityPool pool = dataio::generate_synthetic(params);
        const dataio::EnrollmentSplit split = dataio::make_enrollment(
            pool, authorized_id, holdout, calib_fraction, train_fraction, split_seed);

        const std::filesystem::path root(out_dir);
        dataio::save_dataset(split.train, root / "train");
        dataio::save_dataset(split.calib, root / "calib");
        dataio::save_dataset(split.test, root / "test");
        if (split.degenerate_protocol) {
            out << "warning: no impostor identities held out; test impostors also appear "
                   "in training\n";
        }
        out << "wrote train=" << split.train.samples.size()
            << " calib=" << split.calib.samples.size() << " test=" << split.test.samples.size()
            << " samples under " << root.string() << '\n';
        return kExitSuccess;
    });
}

// enroll: trains on data_dir/train, calibrates on data_dir/calib, and
// writes the model artifact. Telemetry streams to out.
inline int cmd_enroll(const std::string& config_path, const std::string& data_dir,
                      const std::string& model_path, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&]() {
        const cfg::RunConfig c = cfg::RunConfig::parse_file(config_path);
        c.reject_unknown(detail::enroll_keys());
        const std::filesystem::path root(data_dir);
        const dataio::Dataset train_set =
            dataio::load_dataset(root / "train", dataio::SplitTag::kTrain);
        const dataio::Dataset calib_set =
            dataio::load_dataset(root / "calib", dataio::SplitTag::kCalib);
        if (train_set.samples.empty()) {
            throw InsufficientDataError("training split under " + root.string() + " is empty");
        }
        const model::Objective objective =
            model::objective_from_name(c.str_or("objective", "regnet_kl"));
        const latent::TargetSpec target = detail::target_from_config(c);
        const train::TrainConfig tcfg = detail::train_from_config(c);
        const enc::EncoderConfig encoder = detail::encoder_from_config(
            c, target, tcfg, train_set.samples.front().image.shape());
        if (tcfg.steps == 0) {
            out << "warning: steps = 0; the artifact keeps freshly initialized parameters\n";
        }
        const model::ModelArtifact artifact =
            train::enroll(train_set, calib_set, encoder, target, tcfg, objective, &out);
        model::save_model(artifact, model_path);
        out << "wrote model " << model_path << " (threshold tau=" << std::setprecision(6)
            << artifact.threshold.tau << ")\n";
        return kExitSuccess;
    });
}

// verify: scores one image against the stored threshold. Prints the
// decision and the statistic; exits 0 on accept, 1 on reject.
inline int cmd_verify(const std::string& model_path, const std::string& image_path,
                      std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&]() {
        const model::ModelArtifact m = model::load_model(model_path);
        const num::Tensor image = dataio::load_image(image_path);
        std::vector<dataio::LabeledSample> one;
        one.push_back(dataio::LabeledSample{image, 0, 0});
        const double stat = scoring::score_samples(m, one).front();
        const bool accepted = decision::decide(stat, m.threshold);
        out << (accepted ? "accept" : "reject") << " statistic=" << std::setprecision(6) << stat
            << " threshold=" << m.threshold.tau << '\n';
        return accepted ? kExitAccept : kExitReject;
    });
}

// eval: scores a labeled dataset directory and writes report.txt,
// roc.csv, hist_auth.csv, hist_unauth.csv under out_dir.
inline int cmd_eval(const std::string& model_path, const std::string& data_dir,
                    const std::string& out_dir, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&]() {
        const model::ModelArtifact m = model::load_model(model_path);
        const dataio::Dataset data =
            dataio::load_dataset(data_dir, dataio::SplitTag::kTest);
        const metrics::ScoreSet scores = scoring::score_dataset(m, data);
        const std::string report = detail::format_report(scores);

        const std::filesystem::path root(out_dir);
        std::error_code ec;
        std::filesystem::create_directories(root, ec);
        if (ec) throw IoError("cannot create directory " + root.string());
        detail::write_text_file(root / "report.txt", report);
        detail::write_stream(root / "roc.csv", [&](std::ostream& os) {
            metrics::write_roc_csv(os, metrics::roc(scores));
        });
        detail::write_stream(root / "hist_auth.csv", [&](std::ostream& os) {
            metrics::write_histogram_csv(os, metrics::histogram(scores.authorized, 32));
        });
        detail::write_stream(root / "hist_unauth.csv", [&](std::ostream& os) {
            metrics::write_histogram_csv(os, metrics::histogram(scores.unauthorized, 32));
        });
        out << report;
        return kExitSuccess;
    });
}

// calibrate: rescores a labeled dataset directory and rewrites the
// model's threshold in place at the requested false-accept target.
inline int cmd_calibrate(const std::string& model_path, const std::string& data_dir,
                         double target_far, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&]() {
        model::ModelArtifact m = model::load_model(model_path);
        const dataio::Dataset data =
            dataio::load_dataset(data_dir, dataio::SplitTag::kCalib);
        const metrics::ScoreSet scores = scoring::score_dataset(m, data);
        m.threshold = decision::calibrate_empirical(scores, target_far);
        model::save_model(m, model_path);
        out << "recalibrated threshold tau=" << std::setprecision(6) << m.threshold.tau
            << " at target FAR " << target_far << '\n';
        return kExitSuccess;
    });
}

}  // namespace regnet::cli
