#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "probest/analysis.hpp"
#include "probest/detectable.hpp"
#include "probest/dynamics.hpp"
#include "probest/highgain.hpp"
#include "probest/probing.hpp"

namespace probest {

enum class ScenarioMode { passive, probing };

/**
 * Flat key = value scenario description. Optional numeric fields left as
 * "auto" are resolved by the selection rules before simulation and echoed
 * into the report together with the margins that justified them.
 */
/**
 * Externally scripted linear closed loop in factored form:
 *   xdot_p = A_pp x_p + A_pc x_c + B_p y,  y = C_p x_p
 *   xdot_c = A_cc x_c + B_c y
 * The factorization keeps the controller reading the plant only through
 * the output channel. Passive mode only (no analytic certificate or
 * reconstruction map comes with a scripted model).
 */
struct LinearBlocks {
    Mat A_pp, A_pc, B_p, A_cc, B_c, C_p;
};

struct ScenarioConfig {
    std::string name;
    std::string system;
    ScenarioMode mode = ScenarioMode::probing;
    std::optional<LinearBlocks> linear_blocks;

    double delta_x = 0;
    double K_xtilde = 0;
    double eps_xtilde = 0;
    double eps_y = 0.05;
    std::optional<double> sigma;  // explicit stealth budget gates the run
    std::optional<double> r;
    std::optional<double> R_m;
    double nu = 1.0;
    std::optional<double> T;
    std::optional<double> t_star;
    std::optional<double> theta;
    double h_step = 0.01;
    long periods = 10;
    double horizon = 10.0;  // passive-mode time horizon
    std::uint64_t seed = 1;
    int q = 1;
    std::optional<double> probe_amplitude;
    std::optional<Vec> x0;
    std::optional<Vec> xhat0;
    int sample_count = 4096;
    double fit_horizon = 0;  // 0 -> per-system default
    long max_steps = 50000000;
    double escape_bound = 1e9;
    double passive_error_tol = 1e-6;
    int rows_per_probe = 32;

    void validate() const;
};

/// Parses a flat key = value file (# comments). Unknown keys are rejected;
/// parse errors carry the line number.
ScenarioConfig load_scenario(const std::string& path);

/// Parses config text directly (used by tests).
ScenarioConfig parse_scenario_text(const std::string& text,
                                   const std::string& origin = "<string>");

/**
 * A built-in example system: models, analytic observability map, analytic
 * Lyapunov certificate and per-scenario defaults. The probe amplitude
 * parameterizes both the probe signal and the reconstruction map.
 */
struct BuiltinSystem {
    std::string name;
    ClosedLoopSystem sys;
    std::optional<LinearClosedLoop> linear;
    std::function<ProbeSignal(double amplitude, int q)> probe;
    std::function<ObservabilityMap(double amplitude)> map;
    std::function<LyapunovCertificate(double delta_x, double R_m)> certificate;
    double default_probe_amplitude = 1.0;
    double default_fit_horizon = 100.0;
    Vec default_x0;
};

/// Catalogue of the built-in systems, keyed by name.
const std::map<std::string, BuiltinSystem>& builtin_systems();

struct RunResult {
    int exit_code = 0;
    std::string report_json;
    SimulationTrace trace;
    std::string trace_path;
    std::string report_path;
};

/**
 * Full pipeline for one scenario: passive mode runs detectability ->
 * gain design -> co-simulation; probing mode runs constant estimation ->
 * envelope fits -> parameter selection -> probed co-simulation ->
 * verification. Writes <name>.trace.csv and <name>.report.json into
 * out_dir. Exit codes: 0 all verdicts pass, 2 verdict failure,
 * 3 infeasible parameters, 4 model/config error.
 */
RunResult run_scenario(const ScenarioConfig& config, const std::string& out_dir);

/// load + run; exceptions are converted into error reports and exit codes.
int run_scenario_file(const std::string& path, const std::string& out_dir,
                      const std::map<std::string, std::string>& overrides = {});

}  // namespace probest
