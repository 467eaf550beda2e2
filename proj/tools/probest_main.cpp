#include <CLI11.hpp>
#include <cstdio>
#include <future>
#include <map>
#include <string>
#include <vector>

#include "probest/scenario.hpp"

// Scenario runner. `run` loads a flat key=value scenario file, drives the
// passive or probing pipeline and writes <name>.trace.csv plus
// <name>.report.json. Exit codes: 0 pass, 2 verdict failure, 3 infeasible
// parameters, 4 model/config error.
int main(int argc, char** argv) {
    CLI::App app{"closed-loop state estimation scenarios"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run one or more scenario files");
    std::vector<std::string> files;
    std::string out_dir = ".";
    std::string seed, h_step, periods;
    bool batch = false;
    run->add_option("scenario", files, "scenario file(s)")->required()->expected(-1);
    run->add_option("--out-dir", out_dir, "output directory");
    run->add_option("--seed", seed, "override the scenario seed");
    run->add_option("--h-step", h_step, "override the integration step");
    run->add_option("--periods", periods, "override the probing period count");
    run->add_flag("--batch", batch, "run the scenarios in parallel");

    CLI11_PARSE(app, argc, argv);

    std::map<std::string, std::string> overrides;
    if (!seed.empty()) overrides["seed"] = seed;
    if (!h_step.empty()) overrides["h_step"] = h_step;
    if (!periods.empty()) overrides["periods"] = periods;

    int worst = 0;
    if (batch && files.size() > 1) {
        std::vector<std::future<int>> jobs;
        jobs.reserve(files.size());
        for (const auto& f : files)
            jobs.push_back(std::async(std::launch::async, [&, f] {
                return probest::run_scenario_file(f, out_dir, overrides);
            }));
        for (std::size_t i = 0; i < files.size(); ++i) {
            const int code = jobs[i].get();
            std::printf("%s: exit %d\n", files[i].c_str(), code);
            worst = std::max(worst, code);
        }
    } else {
        for (const auto& f : files) {
            const int code = probest::run_scenario_file(f, out_dir, overrides);
            std::printf("%s: exit %d\n", f.c_str(), code);
            worst = std::max(worst, code);
        }
    }
    return worst;
}
