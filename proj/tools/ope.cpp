// Command-line front end: simulate, clone-policy, annotate, evaluate,
// entropy-curve, report.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cfope/experiment.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> annotator;
    std::optional<std::string> mode;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")->required();
    auto* seed = cmd->add_option("--seed", "override the master seed");
    seed->each([&args](const std::string& v) { args.seed = std::stoull(v); });
    auto* out = cmd->add_option("--out", "override the output directory");
    out->each([&args](const std::string& v) { args.out_dir = v; });
    auto* annot = cmd->add_option("--annotator", "override the annotator kind")
                      ->check(CLI::IsMember({"oracle", "noisy", "llm", "mock"}));
    annot->each([&args](const std::string& v) { args.annotator = v; });
    auto* mode = cmd->add_option("--mode", "override the aggregation mode")
                     ->check(CLI::IsMember({"pool", "average"}));
    mode->each([&args](const std::string& v) { args.mode = v; });
}

cfope::ExperimentConfig resolve(const CommonArgs& args) {
    cfope::ExperimentConfig config = cfope::ExperimentConfig::load_file(args.config_path);
    if (args.seed) {
        config.seed = *args.seed;
        if (config.simulate) config.simulate->seed = *args.seed;
    }
    if (args.out_dir) config.out_dir = *args.out_dir;
    if (args.annotator) config.annotator.kind = cfope::annotator_kind_from_name(*args.annotator);
    if (args.mode) config.aggregation = cfope::aggregation_mode_from_name(*args.mode);
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"off-policy evaluation of dosing policies with counterfactual annotations"};
    app.require_subcommand(1);

    CommonArgs args;
    std::size_t annotate_count = 0;
    std::optional<std::size_t> entropy_step;

    auto* simulate = app.add_subcommand("simulate", "generate a cohort CSV and split manifest");
    add_common(simulate, args);
    auto* clone = app.add_subcommand("clone-policy", "behavior-clone the split policies");
    add_common(clone, args);
    auto* annotate = app.add_subcommand("annotate", "produce counterfactual annotations (JSONL)");
    add_common(annotate, args);
    annotate->add_option("--count", annotate_count,
                         "annotation count (default: largest schedule entry)");
    auto* evaluate = app.add_subcommand("evaluate", "run the full evaluation protocol");
    add_common(evaluate, args);
    auto* entropy = app.add_subcommand("entropy-curve", "annotation-count entropy table");
    add_common(entropy, args);
    auto* step_opt = entropy->add_option("--step", "entropy curve batch size");
    step_opt->each([&entropy_step](const std::string& v) { entropy_step = std::stoull(v); });
    auto* report = app.add_subcommand("report", "print the summary of an evaluation run");
    add_common(report, args);

    CLI11_PARSE(app, argc, argv);

    try {
        cfope::ExperimentConfig config = resolve(args);
        if (entropy_step) config.entropy_step = *entropy_step;

        if (simulate->parsed()) {
            const auto out = cfope::cmd_simulate(config);
            std::cout << "wrote " << out.cohort.size() << " patients to " << out.csv_path.string()
                      << "\n";
            std::cout << "split manifest: " << out.manifest_path.string() << " (behavior "
                      << out.split.behavior.size() << ", target " << out.split.target.size()
                      << ")\n";
        } else if (clone->parsed()) {
            const auto out = cfope::cmd_clone_policy(config);
            std::cout << "behavior policy accuracy " << out.behavior.validation_accuracy << " -> "
                      << out.behavior_path.string() << "\n";
            std::cout << "target policy accuracy " << out.target.validation_accuracy << " -> "
                      << out.target_path.string() << "\n";
        } else if (annotate->parsed()) {
            const auto out = cfope::cmd_annotate(config, annotate_count);
            std::cout << "wrote " << out.annotations.size() << " annotations ("
                      << out.n_failed << " failed of " << out.n_requested << " requested) to "
                      << out.jsonl_path.string() << "\n";
        } else if (evaluate->parsed()) {
            const auto out = cfope::cmd_evaluate(config);
            std::cout << "report: " << out.report_path.string() << "\n";
            std::cout << "DM RMSE " << out.report.dm.rmse;
            if (!out.report.schedule.empty())
                std::cout << ", DM+ RMSE " << out.report.schedule.back().dm_plus.rmse << " @"
                          << out.report.schedule.back().effective << " annotations";
            std::cout << "\n";
        } else if (entropy->parsed()) {
            const auto out = cfope::cmd_entropy_curve(config);
            std::cout << "entropy curve (" << out.curve.points.size() << " points) -> "
                      << out.csv_path.string() << "\n";
        } else if (report->parsed()) {
            std::cout << cfope::cmd_report(config);
        }
        return 0;
    } catch (const cfope::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
