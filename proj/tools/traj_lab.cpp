// traj-lab: run the whole experiment (or individual stages) from one config.

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"
#include "trajlab/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

int resolve_jobs(int cli_jobs) {
    // TRAJ_LAB_JOBS takes precedence over --jobs.
    if (const char* env = std::getenv("TRAJ_LAB_JOBS")) {
        try {
            return static_cast<int>(trajlab::parse_int(env));
        } catch (const trajlab::Error&) {
            std::cerr << "warning: ignoring non-numeric TRAJ_LAB_JOBS='" << env << "'\n";
        }
    }
    return cli_jobs;
}

std::set<trajlab::Stage> parse_stages(const std::string& csv) {
    std::set<trajlab::Stage> stages;
    for (const auto& name : trajlab::split(csv, ',')) {
        const auto trimmed = trajlab::trim(name);
        if (!trimmed.empty()) {
            stages.insert(trajlab::stage_from_name(std::string(trimmed)));
        }
    }
    if (stages.empty()) {
        throw trajlab::ConfigError("--stages names no stages");
    }
    return stages;
}

int run(const std::string& config_path, const std::set<trajlab::Stage>& stages,
        const std::string& out_override, int jobs) {
    trajlab::RunConfig config = trajlab::RunConfig::load(config_path);
    if (!out_override.empty()) {
        config.out_dir = out_override;
    }
    config.jobs = std::max(1, resolve_jobs(jobs));

    const auto result = trajlab::run_pipeline(config, stages);
    for (auto s : result.executed) {
        std::cout << "stage " << trajlab::stage_name(s) << ": done\n";
    }
    for (auto s : result.skipped) {
        std::cout << "stage " << trajlab::stage_name(s) << ": up to date, skipped\n";
    }
    std::cout << "artifacts in " << result.out_dir.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale language-model acquisition laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string stages_csv;
    std::string out_dir;
    int jobs = 1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run configuration file")->required();
        cmd->add_option("--out", out_dir, "override the output directory");
        cmd->add_option("--jobs", jobs, "worker threads (TRAJ_LAB_JOBS overrides)");
    };

    CLI::App* cmd_run = app.add_subcommand("run", "run the pipeline (default: all stages)");
    add_common(cmd_run);
    cmd_run->add_option("--stages", stages_csv, "comma-separated subset of data,train,eval,analyze,report");

    for (const char* name : {"train", "eval", "analyze", "report"}) {
        add_common(app.add_subcommand(name, std::string("run only the ") + name + " stage"));
    }

    CLI11_PARSE(app, argc, argv);

    try {
        std::set<trajlab::Stage> stages;
        if (app.got_subcommand("run")) {
            stages = stages_csv.empty() ? trajlab::all_stages() : parse_stages(stages_csv);
        } else {
            for (const char* name : {"train", "eval", "analyze", "report"}) {
                if (app.got_subcommand(name)) {
                    stages = {trajlab::stage_from_name(name)};
                }
            }
        }
        return run(config_path, stages, out_dir, jobs);
    } catch (const trajlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const trajlab::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
