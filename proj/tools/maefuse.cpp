// maefuse: MAE pretraining, linear-probe classification and MAE-FUnet
// segmentation experiments driven by TOML configs.
//
//   maefuse <pretrain|classify|segment|synth|report> --config run.toml \
//       [--set key=value]... [--workers N]

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maefuse/runner.hpp"
#include "maefuse/version.hpp"

namespace {

struct SubArgs {
    std::string config;
    std::vector<std::string> sets;
    int workers = 0;
};

void add_common(CLI::App* sub, SubArgs& args) {
    sub->add_option("--config", args.config, "TOML config file")->required();
    sub->add_option("--set", args.sets, "dotted-key override, e.g. --set optim.steps=100");
    sub->add_option("--workers", args.workers, "parallel data-preprocessing workers");
}

int dispatch(const std::string& task, const SubArgs& args) {
    auto cfg = maefuse::ExperimentConfig::load(args.config, args.sets);
    cfg.task = task;
    if (args.workers > 0) cfg.workers = args.workers;
    return maefuse::run_task(std::move(cfg));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string("maefuse ") + maefuse::kVersion};
    app.require_subcommand(1);

    std::map<std::string, SubArgs> args;
    for (const char* task : {"pretrain", "classify", "segment", "synth"}) {
        auto* sub = app.add_subcommand(task);
        add_common(sub, args[task]);
    }
    auto& report_args = args["report"];
    auto* report = app.add_subcommand("report", "re-render a report.csv as Markdown");
    report->add_option("--config", report_args.config, "TOML config file");
    report->add_option("--set", report_args.sets, "dotted-key override");
    std::string report_in, report_out;
    report->add_option("--in", report_in, "input report.csv");
    report->add_option("--out", report_out, "output report.md");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        for (const char* task : {"pretrain", "classify", "segment", "synth"}) {
            if (app.get_subcommand(task)->parsed()) return dispatch(task, args[task]);
        }
        if (report->parsed()) {
            maefuse::ExperimentConfig cfg;
            if (!report_args.config.empty()) {
                cfg = maefuse::ExperimentConfig::load(report_args.config, report_args.sets);
            } else {
                cfg.config_dir = std::filesystem::current_path();
            }
            cfg.task = "report";
            if (!report_in.empty()) cfg.report_in = report_in;
            if (!report_out.empty()) cfg.report_out = report_out;
            return maefuse::run_task(std::move(cfg));
        }
    } catch (const maefuse::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const maefuse::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const maefuse::NumericError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
