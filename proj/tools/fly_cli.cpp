// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

// Command-line front end: train toy models, run decode sessions, compare
// the three verification modes, sweep hyper-parameters, and re-render
// reports. Exit codes: 0 success, 1 usage/config error, 2 runtime error.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fly/log.hpp"
#include "fly/runner.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    fly::RunOverrides overrides;
    bool no_timestamp = false;
};

void add_common_options(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration file (JSON)")->required();
    cmd->add_option("--mode", args.overrides.mode, "override decode mode (fly|standard_spd|target_only)");
    cmd->add_option("--K", args.overrides.K, "override draft tokens per round");
    cmd->add_option("--W", args.overrides.W, "override deferred window length");
    cmd->add_option("--theta", args.overrides.theta, "override entropy gate threshold");
    cmd->add_option("--cost-profile", args.overrides.cost_profile, "cost profile name (llama70b|llama405b) or path");
    cmd->add_option("--seed", args.overrides.seed, "override base seed");
    cmd->add_option("--out", args.overrides.output_dir, "override output directory");
    cmd->add_flag("--no-timestamp", args.no_timestamp, "omit the timestamp header from CSV outputs");
}

void print_rows(const std::vector<fly::SummaryRow>& rows) {
    for (const auto& row : rows) {
        const std::string axis_part =
            row.axis.empty() ? "" : row.axis + "=" + fly::detail::fmt_double(row.value) + " ";
        std::printf("prompt %d %s%s%s: tau %.3f, est. speedup %.3f, tokens %lld\n", row.prompt_index,
                    axis_part.c_str(), fly::to_string(row.cfg.mode).c_str(), row.cfg.mla ? " (mla)" : "",
                    row.summary.tau, row.summary.estimated_speedup,
                    static_cast<long long>(row.summary.total_tokens));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"training-free loosely speculative decoding toolkit"};
    app.require_subcommand(1);

    // train-model
    auto* train = app.add_subcommand("train-model", "train a Markov model from a text corpus");
    std::string corpus_path, train_out, tokenizer_kind = "byte";
    int order = 2;
    double smoothing = 0.05;
    train->add_option("--corpus", corpus_path, "corpus text file")->required();
    train->add_option("--order", order, "Markov order (context window length)");
    train->add_option("--smoothing", smoothing, "additive smoothing constant");
    train->add_option("--tokenizer", tokenizer_kind, "byte or whitespace");
    train->add_option("--out", train_out, "output model file")->required();

    // run / compare / sweep / report
    CommonArgs run_args, compare_args, sweep_args;
    auto* run_cmd = app.add_subcommand("run", "decode every prompt in the configured mode");
    add_common_options(run_cmd, run_args);
    auto* compare_cmd = app.add_subcommand("compare", "run target-only, standard, and loose modes per prompt");
    add_common_options(compare_cmd, compare_args);
    auto* sweep_cmd = app.add_subcommand("sweep", "sweep W, theta, or K over a value grid");
    add_common_options(sweep_cmd, sweep_args);
    std::string sweep_axis;
    std::vector<double> sweep_values;
    sweep_cmd->add_option("--axis", sweep_axis, "sweep axis: W, theta, or K")->required();
    sweep_cmd->add_option("--values", sweep_values, "axis values")->required()->delimiter(',');

    auto* report_cmd = app.add_subcommand("report", "re-render report.txt from an output directory");
    std::string report_dir;
    report_cmd->add_option("--out", report_dir, "output directory holding run_summary.csv or sweep.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) {
            const auto info = fly::cmd_train_model(corpus_path, order, smoothing, tokenizer_kind, train_out);
            std::printf("trained model: vocab size %d, %zu context windows -> %s\n", info.vocab_size,
                        info.table_entries, train_out.c_str());
            return 0;
        }
        if (run_cmd->parsed()) {
            const auto run = fly::load_run(run_args.config_path, run_args.overrides);
            const auto rows = fly::cmd_run(run, {!run_args.no_timestamp});
            print_rows(rows);
            std::printf("wrote %s\n", (run.config.output_dir / "run_summary.csv").c_str());
            return 0;
        }
        if (compare_cmd->parsed()) {
            const auto run = fly::load_run(compare_args.config_path, compare_args.overrides);
            const auto rows = fly::cmd_compare(run, {!compare_args.no_timestamp});
            print_rows(rows);
            std::printf("wrote %s\n", (run.config.output_dir / "run_summary.csv").c_str());
            return 0;
        }
        if (sweep_cmd->parsed()) {
            const auto run = fly::load_run(sweep_args.config_path, sweep_args.overrides);
            const auto axis = fly::sweep_axis_from_string(sweep_axis);
            const auto rows = fly::cmd_sweep(run, axis, sweep_values, {!sweep_args.no_timestamp});
            print_rows(rows);
            std::printf("wrote %s\n", (run.config.output_dir / "sweep.csv").c_str());
            return 0;
        }
        if (report_cmd->parsed()) {
            std::fputs(fly::cmd_report(report_dir).c_str(), stdout);
            return 0;
        }
    } catch (const fly::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::domain_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        fly::log_error(e.what());
        std::fprintf(stderr, "runtime error: %s\n", e.what());
        return 2;
    }
    return 0;
}
