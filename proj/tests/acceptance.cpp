// SPDX-License-Identifier: Apache-2.0

// Release gate. Exercises the eight acceptance checks end to end,
// prints one verdict line per check, and exits with the number of
// failed checks, so exit status 0 means the build is releasable.
//
// The heavy checks (4, 5, 6) train full conv enrollments; the whole
// binary finishes in a few minutes on one desktop core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "regnet/baseline.hpp"
#include "regnet/cli.hpp"
#include "regnet/dataio.hpp"
#include "regnet/decision.hpp"
#include "regnet/encoder.hpp"
#include "regnet/latent_objective.hpp"
#include "regnet/metrics.hpp"
#include "regnet/model_io.hpp"
#include "regnet/scoring.hpp"
#include "regnet/trainer.hpp"

namespace fs = std::filesystem;
namespace num = regnet::num;
namespace enc = regnet::enc;
namespace latent = regnet::latent;
namespace metrics = regnet::metrics;
namespace decision = regnet::decision;
namespace dataio = regnet::dataio;
namespace model = regnet::model;
namespace train = regnet::train;
namespace baseline = regnet::baseline;
namespace scoring = regnet::scoring;
namespace cli = regnet::cli;

namespace {

int g_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs one check, catching anything it throws, and prints the verdict.
template <typename Body>
void criterion(int idx, Body&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
        pass = body(detail);
    } catch (const std::exception& e) {
        pass = false;
        detail = std::string("exception: ") + e.what();
    }
    if (!pass) ++g_failures;
    std::cout << '[' << idx << "] " << (pass ? "PASS" : "FAIL") << ' ' << detail << " ["
              << std::fixed << std::setprecision(1) << seconds_since(t0) << " s]" << std::endl;
}

const fs::path& scratch() {
    static const fs::path root = [] {
        const fs::path p = fs::temp_directory_path() / "regnet_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

num::Tensor uniform_tensor(const std::vector<std::size_t>& shape, std::uint64_t seed, double lo,
                           double hi) {
    num::Tensor t = num::Tensor::zeros(shape);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.values()) v = u(rng);
    return t;
}

// ---------------------------------------------------------------- 1 --
// Analytic gradients of both training losses against central finite
// differences on the small mlp encoder.

// Largest relative error over every parameter component between the
// backward-pass gradient and a central finite difference of loss_fn,
// which must build the loss on the given graph (value-only when null).
template <typename LossFn>
double max_gradient_error(enc::EncoderParams& params, LossFn&& loss_fn) {
    num::Graph g;
    num::Tensor loss = loss_fn(&g);
    for (auto& [name, p] : params) p.zero_grad();
    g.backward(loss);

    std::map<std::string, std::vector<double>> analytic;
    for (const auto& [name, p] : params) analytic[name] = p.grad();

    double worst = 0.0;
    for (auto& [name, p] : params) {
        const std::vector<double> numeric =
            oracle::fd_gradient(p.values(), 1e-3, [&]() { return loss_fn(nullptr).item(); });
        worst = std::max(worst, oracle::max_rel_error(analytic[name], numeric));
    }
    return worst;
}

bool check_gradients(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();

    enc::EncoderConfig cfg;
    cfg.arch = enc::ArchKind::kMlp;
    cfg.in_channels = 1;
    cfg.in_height = 4;
    cfg.in_width = 4;
    cfg.mlp_widths = {8};
    cfg.latent_dim = 3;
    cfg.validate();

    const num::Tensor xa = uniform_tensor({8, 1, 4, 4}, 42, 0.1, 0.9);
    const num::Tensor xu = uniform_tensor({8, 1, 4, 4}, 43, 0.1, 0.9);

    enc::EncoderParams params_kl = enc::init_params(cfg, 1);
    const double kl_err = max_gradient_error(params_kl, [&](num::Graph* g) {
        num::Tensor za = enc::forward(cfg, params_kl, xa, g);
        num::Tensor zu = enc::forward(cfg, params_kl, xu, g);
        return latent::combined_loss(za, zu, latent::TargetSpec{}, g);
    });

    // Both-class batch for the classifier loss: authorized rows first.
    num::Tensor x_cat = num::Tensor::zeros({16, 1, 4, 4});
    std::copy(xa.values().begin(), xa.values().end(), x_cat.values().begin());
    std::copy(xu.values().begin(), xu.values().end(), x_cat.values().begin() + xa.size());
    std::vector<double> labels(16, 0.0);
    std::fill(labels.begin(), labels.begin() + 8, 1.0);

    enc::EncoderParams params_bce = enc::init_params(cfg, 1);
    baseline::init_classifier(params_bce, cfg.latent_dim, 1);
    const double bce_err = max_gradient_error(params_bce, [&](num::Graph* g) {
        num::Tensor z = enc::forward(cfg, params_bce, x_cat, g);
        return baseline::bce_loss(baseline::classifier_logits(params_bce, z, g), labels, g);
    });

    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << "gradient check on mlp 16->8->3: kl max rel "
       << kl_err << ", bce max rel " << bce_err;
    detail = os.str();
    return kl_err < 1e-4 && bce_err < 1e-4 && secs < 10.0;
}

// ---------------------------------------------------------------- 2 --
// Closed-form divergence against a Monte-Carlo estimate.

bool check_kl_oracle(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2026);
    std::uniform_real_distribution<double> off(1.0, 3.0);
    std::uniform_real_distribution<double> ratio(1.5, 2.5);

    double worst_rel = 0.0;
    for (int t = 0; t < 20; ++t) {
        const std::size_t d = 1 + static_cast<std::size_t>(t % 4);
        const double mu_t = (t % 2 == 0) ? 0.0 : 40.0;
        const double sigma_t = 0.5 + 0.5 * static_cast<double>(t % 3);

        std::vector<double> mean(d), var(d);
        for (std::size_t i = 0; i < d; ++i) {
            const double sign = (i % 2 == 0) ? 1.0 : -1.0;
            mean[i] = mu_t + sign * sigma_t * off(rng);
            var[i] = sigma_t * sigma_t * ratio(rng);
        }

        latent::BatchStats st;
        st.mean = num::Tensor::zeros({d});
        st.var = num::Tensor::zeros({d});
        std::copy(mean.begin(), mean.end(), st.mean.values().begin());
        std::copy(var.begin(), var.end(), st.var.values().begin());
        st.count = 64;

        const double closed = latent::kl_to_target(st, mu_t, sigma_t).item();
        const double mc = oracle::mc_kl(mean, var, mu_t, sigma_t, 1000000,
                                        5000 + static_cast<std::uint64_t>(t));
        worst_rel = std::max(worst_rel, std::fabs(closed - mc) / std::fabs(closed));
    }

    // Matching moments must give exactly zero divergence.
    double worst_zero = 0.0;
    for (const auto& [d, mu_t, sigma_t] :
         std::vector<std::tuple<std::size_t, double, double>>{{3, 40.0, 1.0}, {1, 0.0, 1.0}}) {
        latent::BatchStats st;
        st.mean = num::Tensor::zeros({d});
        st.var = num::Tensor::zeros({d});
        for (double& v : st.mean.values()) v = mu_t;
        for (double& v : st.var.values()) v = sigma_t * sigma_t;
        st.count = 64;
        worst_zero = std::max(worst_zero, std::fabs(latent::kl_to_target(st, mu_t, sigma_t).item()));
    }

    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << std::scientific << std::setprecision(2)
       << "kl vs monte carlo on 20 triples: max rel dev " << worst_rel
       << ", matched-moment kl " << worst_zero;
    detail = os.str();
    return worst_rel <= 0.02 && worst_zero < 1e-12 && secs < 30.0;
}

// ---------------------------------------------------------------- 3 --
// Rate metrics against brute-force threshold enumeration.

bool check_metrics_oracle(std::string& detail) {
    std::mt19937_64 rng(2027);
    double worst = 0.0;

    for (int k = 0; k < 50; ++k) {
        const std::size_t na = 1 + rng() % 1000;
        const std::size_t nu = 1 + rng() % 1000;
        const double gap = 0.5 + 0.25 * static_cast<double>(k % 16);
        std::normal_distribution<double> da(0.0, 1.5);
        std::normal_distribution<double> du(gap, 1.5);

        metrics::ScoreSet s;
        for (std::size_t i = 0; i < na; ++i) s.authorized.push_back(da(rng));
        for (std::size_t i = 0; i < nu; ++i) s.unauthorized.push_back(du(rng));
        if (k % 3 == 0) {
            // Coarse grid forces ties across and within classes.
            for (double& v : s.authorized) v = std::round(v * 10.0) / 10.0;
            for (double& v : s.unauthorized) v = std::round(v * 10.0) / 10.0;
        }

        const auto bf = oracle::bf_roc(s.authorized, s.unauthorized);
        const metrics::RocCurve curve = metrics::roc(s);
        if (curve.points.size() != bf.size()) {
            detail = "roc vertex count mismatch on set " + std::to_string(k);
            return false;
        }
        for (std::size_t i = 0; i < bf.size(); ++i) {
            worst = std::max(worst, std::fabs(curve.points[i].far - bf[i].far));
            worst = std::max(worst, std::fabs(curve.points[i].frr - bf[i].frr));
            worst = std::max(worst, std::fabs(curve.points[i].gar - bf[i].gar));
        }

        worst = std::max(worst, std::fabs(metrics::eer(s).eer -
                                          oracle::bf_eer(s.authorized, s.unauthorized)));
        for (const double level : {1e-1, 1e-2}) {
            worst = std::max(worst,
                             std::fabs(metrics::gar_at_far(s, level) -
                                       oracle::bf_gar_at_far(s.authorized, s.unauthorized, level)));
        }
    }

    // Hand-checkable anchors.
    const metrics::ScoreSet interleaved{{1.0, 3.0}, {2.0, 4.0}};
    const metrics::ScoreSet separable{{0.1, 0.2}, {5.0, 6.0}};
    const double pin_dev =
        std::max(std::fabs(metrics::eer(interleaved).eer - 0.25), metrics::eer(separable).eer);

    std::ostringstream os;
    os << std::scientific << std::setprecision(2)
       << "rate metrics vs brute force on 50 score sets: max dev " << worst
       << ", anchor dev " << pin_dev;
    detail = os.str();
    return worst < 1e-9 && pin_dev < 1e-12;
}

// ---------------------------------------------------------------- 4-6 --

struct PipelineResult {
    fs::path model_path;
    fs::path report_path;
    metrics::ScoreSet scores;
};

// The full enrollment pipeline of the end-to-end check: generate the
// pool, write the protocol splits to disk, train from the reloaded
// splits, save the model, and evaluate the test split through the
// report command.
PipelineResult run_pipeline(const fs::path& root, model::Objective objective,
                            std::uint64_t train_seed) {
    fs::create_directories(root);

    dataio::SynthParams sp;
    sp.height = 16;
    sp.width = 16;
    sp.identities = 11;
    sp.samples_per_identity = 40;
    sp.seed = 7;
    const dataio::IdentityPool pool = dataio::generate_synthetic(sp);
    const dataio::EnrollmentSplit split = dataio::make_enrollment(pool, 0, 3, 0.2, 0.75, 1);
    dataio::save_dataset(split.train, root / "train");
    dataio::save_dataset(split.calib, root / "calib");
    dataio::save_dataset(split.test, root / "test");

    const dataio::Dataset train_set =
        dataio::load_dataset(root / "train", dataio::SplitTag::kTrain);
    const dataio::Dataset calib_set =
        dataio::load_dataset(root / "calib", dataio::SplitTag::kCalib);

    // Random 14x14 crops during training absorb the +-2 pixel shift
    // nuisance; scoring center-crops full-size images to match.
    const enc::EncoderConfig cfg = enc::EncoderConfig::desk(1, 14, 14);
    train::TrainConfig tc;
    tc.steps = 2000;
    tc.batch_size = 64;
    tc.auth_fraction = 0.5;
    tc.mixup_alpha = 0.2;
    tc.crop = {14, 14};
    tc.seed = train_seed;

    const model::ModelArtifact artifact =
        train::enroll(train_set, calib_set, cfg, latent::TargetSpec{}, tc, objective);
    model::save_model(artifact, root / "model.rgnt");

    std::ostringstream out, err;
    const int rc = cli::cmd_eval((root / "model.rgnt").string(), (root / "test").string(),
                                 (root / "eval").string(), out, err);
    if (rc != 0) {
        throw std::runtime_error("evaluation command failed under " + root.string() + ": " +
                                 err.str());
    }

    PipelineResult r;
    r.model_path = root / "model.rgnt";
    r.report_path = root / "eval" / "report.txt";
    r.scores = scoring::score_dataset(
        model::load_model(r.model_path),
        dataio::load_dataset(root / "test", dataio::SplitTag::kTest));
    return r;
}

std::optional<PipelineResult> g_rep1;

// Seed-7 enrollment with the norm-matching objective; the end-to-end,
// comparison, and determinism checks all share it.
const PipelineResult& rep1() {
    if (!g_rep1) {
        g_rep1 = run_pipeline(scratch() / "regnet_seed7_a", model::Objective::kRegnetKl, 7);
    }
    return *g_rep1;
}

bool check_end_to_end(std::string& detail) {
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineResult& r = rep1();

    const double auth_mean = mean_of(r.scores.authorized);
    const double unauth_mean = mean_of(r.scores.unauthorized);
    const double eer = metrics::eer(r.scores).eer;
    const double gar2 = metrics::gar_at_far(r.scores, 1e-2);
    const double secs = seconds_since(t0);

    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << "end-to-end enrollment: auth mean " << auth_mean
       << ", unauth mean " << unauth_mean << ", eer " << std::setprecision(3) << 100.0 * eer
       << "%, gar@1e-2far " << 100.0 * gar2 << "%";
    detail = os.str();
    return auth_mean < 10.0 && unauth_mean >= 20.0 && unauth_mean <= 80.0 && eer <= 0.01 &&
           gar2 >= 0.95 && secs < 300.0;
}

bool check_baseline_comparison(std::string& detail) {
    std::ostringstream pairs;
    pairs << std::fixed << std::setprecision(1);

    int regnet_wins = 0;
    double baseline_seed7_eer = 0.0;
    double sigma_auth = 0.0, sigma_unauth = 1.0;
    bool reports_ok = true;
    for (int rep = 0; rep < 5; ++rep) {
        const std::uint64_t seed = 7 + static_cast<std::uint64_t>(rep);
        const std::string tag = "seed" + std::to_string(seed);

        const PipelineResult regnet_run =
            (rep == 0) ? rep1()
                       : run_pipeline(scratch() / ("regnet_" + tag), model::Objective::kRegnetKl,
                                      seed);
        const PipelineResult base_run =
            run_pipeline(scratch() / ("baseline_" + tag), model::Objective::kBaselineBce, seed);

        if (rep == 0) {
            baseline_seed7_eer = metrics::eer(base_run.scores).eer;
            // Baseline scores are 1 - sigmoid, so the classifier's raw
            // sigmoid must sit near 1 for authorized test samples and
            // near 0 for impostors.
            sigma_auth = 1.0 - mean_of(base_run.scores.authorized);
            sigma_unauth = 1.0 - mean_of(base_run.scores.unauthorized);
            // The report command must have produced a report for both
            // objectives.
            for (const PipelineResult* pr : {&regnet_run, &base_run}) {
                reports_ok = reports_ok && slurp(pr->report_path).rfind("EER% = ", 0) == 0;
            }
        }

        const double rg = metrics::gar_at_far(regnet_run.scores, 1e-2);
        const double bg = metrics::gar_at_far(base_run.scores, 1e-2);
        if (rg >= bg) ++regnet_wins;
        pairs << (rep ? " " : "") << 100.0 * rg << "/" << 100.0 * bg;
    }

    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << "objective comparison: baseline eer "
       << 100.0 * baseline_seed7_eer << "%, sigmoid auth/unauth " << std::setprecision(2)
       << sigma_auth << "/" << sigma_unauth << ", gar@1e-2far regnet/baseline per seed "
       << pairs.str() << ", regnet ahead in " << regnet_wins << "/5";
    detail = os.str();
    return baseline_seed7_eer <= 0.05 && sigma_auth > 0.9 && sigma_unauth < 0.1 &&
           regnet_wins >= 4 && reports_ok;
}

bool check_determinism(std::string& detail) {
    const PipelineResult& a = rep1();
    const PipelineResult b =
        run_pipeline(scratch() / "regnet_seed7_b", model::Objective::kRegnetKl, 7);

    const bool model_same = slurp(a.model_path) == slurp(b.model_path);
    const bool report_same = slurp(a.report_path) == slurp(b.report_path);
    detail = std::string("repeat pipeline: model bytes ") + (model_same ? "equal" : "DIFFER") +
             ", report bytes " + (report_same ? "equal" : "DIFFER");
    return model_same && report_same;
}

// ---------------------------------------------------------------- 7 --
// Threshold calibration contracts.

bool check_calibration(std::string& detail) {
    std::mt19937_64 rng(2029);
    std::normal_distribution<double> dv(5.0, 2.0);

    // The empirical calibration must return the largest candidate
    // threshold whose false-accept rate stays at or under the target,
    // with every larger candidate violating it.
    const auto far_of = [](const std::vector<double>& unauth, double tau) {
        std::size_t acc = 0;
        for (double v : unauth) acc += (v <= tau) ? 1 : 0;
        return static_cast<double>(acc) / static_cast<double>(unauth.size());
    };

    const double targets[] = {0.0, 0.01, 0.1, 0.25};
    for (int k = 0; k < 20; ++k) {
        metrics::ScoreSet s;
        const std::size_t nu = 1 + rng() % 200;
        for (std::size_t i = 0; i < nu; ++i) {
            double v = dv(rng);
            if (k % 2 == 0) v = std::round(v * 2.0) / 2.0;  // duplicates
            s.unauthorized.push_back(v);
        }
        s.authorized = {0.0, 1.0};

        for (const double target : targets) {
            const double tau = decision::calibrate_empirical(s, target).tau;

            std::vector<double> distinct = s.unauthorized;
            std::sort(distinct.begin(), distinct.end());
            distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
            std::vector<double> candidates;
            candidates.push_back(distinct.front() - 1.0);
            for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
                candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
            }
            candidates.push_back(distinct.back() + 1.0);

            double best = candidates.front();
            for (double c : candidates) {
                if (far_of(s.unauthorized, c) <= target) best = std::max(best, c);
            }
            if (tau != best || far_of(s.unauthorized, tau) > target) {
                detail = "empirical calibration mismatch on set " + std::to_string(k);
                return false;
            }
            for (double c : candidates) {
                if (c > tau && far_of(s.unauthorized, c) <= target) {
                    detail = "candidate above tau satisfies the target on set " +
                             std::to_string(k);
                    return false;
                }
            }
        }
    }

    // Analytic calibration against a quadrature inversion of the
    // chi-square CDF with 3 degrees of freedom.
    const double lib_tau = decision::calibrate_chi_square(0.05, latent::TargetSpec{}).tau;
    double lo = 0.0, hi = 10.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (oracle::simpson_chi2_cdf(3, mid * mid) < 0.95) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const double oracle_tau = 0.5 * (lo + hi);

    std::ostringstream os;
    os << std::fixed << std::setprecision(5) << "calibration contracts: chi-square tau "
       << lib_tau << " vs quadrature " << oracle_tau;
    detail = os.str();
    return std::fabs(lib_tau - 2.7955) <= 1e-3 && std::fabs(lib_tau - oracle_tau) <= 1e-6;
}

// ---------------------------------------------------------------- 8 --

bool check_crop_factors(std::string& detail) {
    const std::size_t f1 = dataio::crop_factor(192, 168, 184, 160);
    const std::size_t f2 = dataio::crop_factor(202, 149, 186, 133);
    detail = "crop factors: 192x168->184x160 gives " + std::to_string(f1) +
             ", 202x149->186x133 gives " + std::to_string(f2);
    return f1 == 81 && f2 == 289;
}

}  // namespace

int main() {
    std::cout << "acceptance: running 8 checks" << std::endl;
    criterion(1, check_gradients);
    criterion(2, check_kl_oracle);
    criterion(3, check_metrics_oracle);
    criterion(4, check_end_to_end);
    criterion(5, check_baseline_comparison);
    criterion(6, check_determinism);
    criterion(7, check_calibration);
    criterion(8, check_crop_factors);
    std::cout << "acceptance: " << (8 - g_failures) << "/8 checks passed" << std::endl;
    return g_failures;
}
