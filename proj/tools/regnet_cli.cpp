// SPDX-License-Identifier: Apache-2.0

// Command-line front end: argv parsing and dispatch only. All command
// logic lives in the library so tests can call it in-process.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "regnet/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{
        "Biometric authentication by latent-distribution matching: train an encoder "
        "that sends the authorized user's inputs to one target Gaussian and everyone "
        "else's to a distant one, then accept by thresholding the latent distance."};
    app.require_subcommand(1);

    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::string model_path;
    std::string image_path;
    double target_far = 1e-2;

    CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic dataset directory");
    gen->add_option("--config", config_path, "key = value config file")->required();
    gen->add_option("--out", out_dir, "output directory (train/, calib/, test/)")->required();

    CLI::App* enroll = app.add_subcommand("enroll", "Train and write a model artifact");
    enroll->add_option("--config", config_path, "key = value config file")->required();
    enroll->add_option("--data", data_dir, "dataset directory with train/ and calib/")
        ->required();
    enroll->add_option("--out", model_path, "output model file")->required();

    CLI::App* verify = app.add_subcommand("verify", "Decide accept/reject for one image");
    verify->add_option("--model", model_path, "model file")->required();
    verify->add_option("--image", image_path, "image file")->required();

    CLI::App* eval = app.add_subcommand("eval", "Score a labeled dataset and write reports");
    eval->add_option("--model", model_path, "model file")->required();
    eval->add_option("--data", data_dir, "labeled dataset directory")->required();
    eval->add_option("--out", out_dir, "output directory for report and CSVs")->required();

    CLI::App* calibrate =
        app.add_subcommand("calibrate", "Rewrite the model threshold from a labeled dataset");
    calibrate->add_option("--model", model_path, "model file, rewritten in place")->required();
    calibrate->add_option("--data", data_dir, "labeled dataset directory")->required();
    calibrate->add_option("--target-far", target_far, "false-accept target in [0, 1)")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        // CLI11 returns 0 for --help; anything else is a usage error.
        return code == 0 ? regnet::cli::kExitSuccess : regnet::cli::kExitUsage;
    }

    if (gen->parsed()) {
        return regnet::cli::cmd_gen_data(config_path, out_dir, std::cout, std::cerr);
    }
    if (enroll->parsed()) {
        return regnet::cli::cmd_enroll(config_path, data_dir, model_path, std::cout, std::cerr);
    }
    if (verify->parsed()) {
        return regnet::cli::cmd_verify(model_path, image_path, std::cout, std::cerr);
    }
    if (eval->parsed()) {
        return regnet::cli::cmd_eval(model_path, data_dir, out_dir, std::cout, std::cerr);
    }
    if (calibrate->parsed()) {
        return regnet::cli::cmd_calibrate(model_path, data_dir, target_far, std::cout,
                                          std::cerr);
    }
    return regnet::cli::kExitUsage;
}
