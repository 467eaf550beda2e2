#include "probest/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "probest/report.hpp"

namespace probest {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_num(const std::string& v, const std::string& where) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw Error(ErrorKind::config, where + ": cannot parse number '" + v + "'");
    }
}

Vec parse_vec(const std::string& v, const std::string& where) {
    std::string s = v;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream in(s);
    std::vector<double> vals;
    double d;
    while (in >> d) vals.push_back(d);
    if (!in.eof())
        throw Error(ErrorKind::config, where + ": cannot parse vector '" + v + "'");
    if (vals.empty())
        throw Error(ErrorKind::config, where + ": empty vector");
    Vec out(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) out[i] = vals[i];
    return out;
}

/// Rows separated by ';', entries by spaces: "1 2; 3 4".
Mat parse_mat(const std::string& v, const std::string& where) {
    std::vector<Vec> rows;
    std::string buf = v;
    std::size_t pos = 0;
    while (pos <= buf.size()) {
        const auto semi = buf.find(';', pos);
        const std::string row =
            buf.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos);
        if (!trim(row).empty()) rows.push_back(parse_vec(row, where));
        if (semi == std::string::npos) break;
        pos = semi + 1;
    }
    if (rows.empty()) throw Error(ErrorKind::config, where + ": empty matrix");
    Mat m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols())
            throw Error(ErrorKind::config, where + ": ragged matrix rows");
        m.row(i) = rows[i].transpose();
    }
    return m;
}

bool is_auto(const std::string& v) { return v == "auto"; }

void apply_kv(ScenarioConfig& c, const std::string& key, const std::string& value,
              const std::string& where) {
    auto num = [&] { return parse_num(value, where); };
    auto opt_num = [&](std::optional<double>& slot) {
        if (is_auto(value))
            slot.reset();
        else
            slot = num();
    };
    if (key == "mode") {
        if (value == "passive")
            c.mode = ScenarioMode::passive;
        else if (value == "probing")
            c.mode = ScenarioMode::probing;
        else
            throw Error(ErrorKind::config, where + ": mode must be passive or probing");
    } else if (key == "system") {
        c.system = value;
    } else if (key == "delta_x") {
        c.delta_x = num();
    } else if (key == "k_xtilde") {
        c.K_xtilde = num();
    } else if (key == "eps_xtilde") {
        c.eps_xtilde = num();
    } else if (key == "eps_y") {
        c.eps_y = num();
    } else if (key == "sigma") {
        opt_num(c.sigma);
    } else if (key == "r") {
        opt_num(c.r);
    } else if (key == "r_margin") {
        opt_num(c.R_m);
    } else if (key == "nu") {
        c.nu = num();
    } else if (key == "T") {
        opt_num(c.T);
    } else if (key == "t_star") {
        opt_num(c.t_star);
    } else if (key == "theta") {
        opt_num(c.theta);
    } else if (key == "h_step") {
        c.h_step = num();
    } else if (key == "periods") {
        c.periods = static_cast<long>(num());
    } else if (key == "horizon") {
        c.horizon = num();
    } else if (key == "seed") {
        c.seed = static_cast<std::uint64_t>(num());
    } else if (key == "q") {
        c.q = static_cast<int>(num());
    } else if (key == "probe_amplitude") {
        opt_num(c.probe_amplitude);
    } else if (key == "x0") {
        if (is_auto(value))
            c.x0.reset();
        else
            c.x0 = parse_vec(value, where);
    } else if (key == "xhat0") {
        if (is_auto(value))
            c.xhat0.reset();
        else
            c.xhat0 = parse_vec(value, where);
    } else if (key == "sample_count") {
        c.sample_count = static_cast<int>(num());
    } else if (key == "fit_horizon") {
        c.fit_horizon = num();
    } else if (key == "max_steps") {
        c.max_steps = static_cast<long>(num());
    } else if (key == "escape_bound") {
        c.escape_bound = num();
    } else if (key == "passive_error_tol") {
        c.passive_error_tol = num();
    } else if (key == "rows_per_probe") {
        c.rows_per_probe = static_cast<int>(num());
    } else if (key == "lin_app" || key == "lin_apc" || key == "lin_bp" ||
               key == "lin_acc" || key == "lin_bc" || key == "lin_cp") {
        if (!c.linear_blocks) c.linear_blocks = LinearBlocks{};
        Mat m = parse_mat(value, where);
        if (key == "lin_app") c.linear_blocks->A_pp = m;
        else if (key == "lin_apc") c.linear_blocks->A_pc = m;
        else if (key == "lin_bp") c.linear_blocks->B_p = m;
        else if (key == "lin_acc") c.linear_blocks->A_cc = m;
        else if (key == "lin_bc") c.linear_blocks->B_c = m;
        else c.linear_blocks->C_p = m;
    } else {
        throw Error(ErrorKind::config, where + ": unknown key '" + key + "'");
    }
}

}  // namespace

void ScenarioConfig::validate() const {
    if (system.empty())
        throw Error(ErrorKind::config, "scenario: missing required key 'system'");
    if (!(h_step > 0.0))
        throw Error(ErrorKind::config, "scenario: h_step must be positive");
    if (mode == ScenarioMode::probing) {
        if (!(delta_x > 0.0))
            throw Error(ErrorKind::config,
                        "scenario: probing mode requires delta_x > 0");
        if (!(K_xtilde > 0.0))
            throw Error(ErrorKind::config,
                        "scenario: probing mode requires k_xtilde > 0");
        if (!(eps_xtilde > 0.0))
            throw Error(ErrorKind::config,
                        "scenario: probing mode requires eps_xtilde > 0");
        if (!(eps_y > 0.0))
            throw Error(ErrorKind::config, "scenario: eps_y must be positive");
        if (!t_star)
            throw Error(ErrorKind::config,
                        "scenario: probing mode requires an explicit t_star "
                        "(no selection rule exists for the probe duration)");
        if (!(*t_star > 0.0))
            throw Error(ErrorKind::config, "scenario: t_star must be positive");
        if (T && *T <= *t_star)
            throw Error(ErrorKind::config, "scenario: t_star must be below T");
        if (theta && *theta < 1.0)
            throw Error(ErrorKind::config, "scenario: theta must be >= 1");
        if (periods < 1)
            throw Error(ErrorKind::config, "scenario: periods must be >= 1");
        if (q < 1) throw Error(ErrorKind::config, "scenario: q must be >= 1");
        if (rows_per_probe < 4)
            throw Error(ErrorKind::config, "scenario: rows_per_probe must be >= 4");
        if (!(nu > 0.0)) throw Error(ErrorKind::config, "scenario: nu must be positive");
    } else {
        if (!(horizon > 0.0))
            throw Error(ErrorKind::config, "scenario: horizon must be positive");
    }
}

ScenarioConfig parse_scenario_text(const std::string& text,
                                   const std::string& origin) {
    ScenarioConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno);
        if (eq == std::string::npos)
            throw Error(ErrorKind::config, where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw Error(ErrorKind::config, where + ": expected key = value");
        apply_kv(c, key, value, where);
    }
    return c;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::config, "cannot open scenario file " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    ScenarioConfig c = parse_scenario_text(buf.str(), path);
    c.name = std::filesystem::path(path).stem().string();
    return c;
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

namespace {

struct ResolvedSystem {
    BuiltinSystem def;  // catalogue entry or synthesized scripted model
    ProbeSignal probe;
    ObservabilityMap map;
    LyapunovCertificate cert;
    Vec x0;
    double amp = 1.0;
};

BuiltinSystem make_scripted_linear(const LinearBlocks& blk) {
    const Eigen::Index n_p = blk.A_pp.rows();
    const Eigen::Index n_c = blk.A_cc.rows();
    const Eigen::Index n_y = blk.C_p.rows();
    if (n_p < 1 || n_y < 1 || blk.A_pp.cols() != n_p || blk.A_cc.cols() != n_c ||
        blk.A_pc.rows() != n_p || blk.A_pc.cols() != n_c ||
        blk.B_p.rows() != n_p || blk.B_p.cols() != n_y ||
        blk.B_c.rows() != n_c || blk.B_c.cols() != n_y || blk.C_p.cols() != n_p)
        throw Error(ErrorKind::config,
                    "linear_custom: inconsistent block dimensions (need all of "
                    "lin_app, lin_apc, lin_bp, lin_acc, lin_bc, lin_cp)");

    BuiltinSystem b;
    b.name = "linear_custom";

    PlantModel plant;
    plant.n_p = static_cast<int>(n_p);
    plant.n_u = static_cast<int>(n_p);
    plant.n_y = static_cast<int>(n_y);
    Mat A_pp = blk.A_pp, C_p = blk.C_p;
    plant.f_p = [A_pp](const Vec& xp, const Vec& u) -> Vec { return A_pp * xp + u; };
    plant.h = [C_p](const Vec& xp) -> Vec { return C_p * xp; };

    ControllerModel ctrl;
    ctrl.n_c = static_cast<int>(n_c);
    Mat A_cc = blk.A_cc, B_c = blk.B_c, A_pc = blk.A_pc, B_p = blk.B_p;
    ctrl.f_c = [A_cc, B_c](const Vec& xc, const Vec& y) -> Vec {
        return A_cc * xc + B_c * y;
    };
    ctrl.kappa = [A_pc, B_p](const Vec& xc, const Vec& y) -> Vec {
        return A_pc * xc + B_p * y;
    };
    b.sys = {plant, ctrl};

    LinearClosedLoop lin;
    lin.A = Mat::Zero(n_p + n_c, n_p + n_c);
    lin.A.topLeftCorner(n_p, n_p) = blk.A_pp + blk.B_p * blk.C_p;
    lin.A.topRightCorner(n_p, n_c) = blk.A_pc;
    lin.A.bottomLeftCorner(n_c, n_p) = blk.B_c * blk.C_p;
    lin.A.bottomRightCorner(n_c, n_c) = blk.A_cc;
    lin.B = Mat::Zero(n_p + n_c, n_y);
    lin.B.topRows(n_p) = blk.B_p;
    lin.B.bottomRows(n_c) = blk.B_c;
    lin.C = Mat::Zero(n_y, n_p + n_c);
    lin.C.leftCols(n_p) = blk.C_p;
    b.linear = lin;
    b.default_x0 = Vec::Zero(n_p + n_c);
    return b;
}

ResolvedSystem resolve_system(const ScenarioConfig& cfg) {
    ResolvedSystem r;
    if (cfg.system == "linear_custom") {
        if (!cfg.linear_blocks)
            throw Error(ErrorKind::config,
                        "linear_custom needs the lin_* block matrices");
        r.def = make_scripted_linear(*cfg.linear_blocks);
    } else {
        const auto& reg = builtin_systems();
        auto it = reg.find(cfg.system);
        if (it == reg.end())
            throw Error(ErrorKind::config, "unknown system '" + cfg.system + "'");
        r.def = it->second;
    }
    const BuiltinSystem& b = r.def;
    b.sys.validate();

    r.amp = cfg.probe_amplitude.value_or(b.default_probe_amplitude);
    if (b.probe) r.probe = b.probe(r.amp, cfg.q);
    if (b.map) {
        r.map = b.map(r.amp);
        if (r.map.q != cfg.q)
            throw Error(ErrorKind::config,
                        "scenario: q does not match the system's observability map");
    }
    if (b.certificate) {
        LyapunovCertificate cert =
            b.certificate(cfg.delta_x > 0 ? cfg.delta_x : 1.0, 0.0);
        const double R_m = cfg.R_m.value_or(cert.R);
        r.cert = b.certificate(cfg.delta_x > 0 ? cfg.delta_x : 1.0, R_m);
    }
    r.x0 = cfg.x0.value_or(b.default_x0);
    if (r.x0.size() != b.sys.dim())
        throw Error(ErrorKind::config, "scenario: x0 has the wrong dimension");
    return r;
}

void emit_scenario_section(JsonWriter& w, const ScenarioConfig& cfg,
                           const ResolvedSystem& rs) {
    w.key("scenario").begin_object();
    w.kv("name", cfg.name.empty() ? cfg.system : cfg.name);
    w.kv("system", cfg.system);
    w.kv("mode", cfg.mode == ScenarioMode::passive ? "passive" : "probing");
    w.kv("seed", static_cast<long>(cfg.seed));
    w.kv("h_step", cfg.h_step);
    w.kv("delta_x", cfg.delta_x);
    w.kv("k_xtilde", cfg.K_xtilde);
    w.kv("eps_xtilde", cfg.eps_xtilde);
    w.kv("eps_y", cfg.eps_y);
    w.kv("nu", cfg.nu);
    w.kv("q", cfg.q);
    w.kv("periods", cfg.periods);
    w.kv("probe_amplitude", rs.amp);
    w.key("x0").begin_array();
    for (Eigen::Index i = 0; i < rs.x0.size(); ++i) w.value(rs.x0[i]);
    w.end_array();
    w.end_object();
}

struct PipelineOutput {
    int exit_code = 4;
    std::string report;
    SimulationTrace trace;
};

// ---------------------------------------------------------------- passive --

PipelineOutput run_passive(const ScenarioConfig& cfg, const ResolvedSystem& rs) {
    const BuiltinSystem& b = rs.def;
    if (!b.linear)
        throw Error(ErrorKind::config,
                    "passive mode needs the linear specialization of the system");
    const LinearClosedLoop& lin = *b.linear;
    lin.validate(b.sys.plant.n_p, b.sys.controller.n_c);

    DetectabilityResult det = check_detectability(lin.A, lin.C);

    PipelineOutput out;
    JsonWriter w;
    w.begin_object();
    emit_scenario_section(w, cfg, rs);

    w.key("detectability").begin_object();
    w.kv("detectable", det.detectable);
    w.key("unobservable_modes").begin_array();
    for (const auto& m : det.unobservable_modes) {
        w.begin_object();
        w.kv("re", m.real());
        w.kv("im", m.imag());
        w.end_object();
    }
    w.end_array();
    w.end_object();

    if (!det.detectable) {
        w.key("verdicts").begin_object();
        w.kv("overall", "infeasible");
        w.kv("reason", "closed loop is not detectable; the passive scheme does not apply");
        w.kv("exit_code", 3);
        w.end_object();
        w.end_object();
        out.exit_code = 3;
        out.report = w.str();
        return out;
    }

    auto poles = default_observer_poles(lin.A);
    Mat L = luenberger_gain(lin.A, lin.C, poles);
    ISSObserver obs = luenberger_observer(lin, L);

    Vec x0 = rs.x0;
    Vec xhat0 = cfg.xhat0.value_or(Vec(x0 + Vec::Ones(x0.size())));
    if (xhat0.size() != x0.size())
        throw Error(ErrorKind::config, "scenario: xhat0 has the wrong dimension");

    PassiveRunOptions popts;
    popts.escape_bound = cfg.escape_bound;
    SimulationTrace trace = run_passive_estimation(b.sys, obs, x0, xhat0,
                                                   cfg.horizon, cfg.h_step, popts);

    // observer-free reference run over the same grid
    Field solo = [&](double, const Vec& x, Vec& dx) {
        Vec y = b.sys.plant.h(x.head(b.sys.plant.n_p));
        closed_loop_field(b.sys, x, y, dx);
    };
    IntegrateOptions iopts;
    iopts.escape_bound = cfg.escape_bound;
    SimulationTrace ref = integrate(solo, x0, 0.0, cfg.horizon, cfg.h_step, iopts);
    bool identical = ref.rows() == trace.rows();
    for (std::size_t i = 0; identical && i < ref.rows(); ++i)
        identical = std::memcmp(ref.x[i].data(), trace.x[i].data(),
                                sizeof(double) * ref.x[i].size()) == 0;

    double final_err = inf_norm(trace.xhat.back() - trace.x.back());
    double max_err = 0;
    for (std::size_t i = 0; i < trace.rows(); ++i)
        max_err = std::max(max_err, inf_norm(trace.xhat[i] - trace.x[i]));

    w.key("observer").begin_object();
    w.key("poles").begin_array();
    for (const auto& p : poles) {
        w.begin_object();
        w.kv("re", p.real());
        w.kv("im", p.imag());
        w.end_object();
    }
    w.end_array();
    w.key("gain").begin_array();
    for (Eigen::Index i = 0; i < L.rows(); ++i)
        for (Eigen::Index j = 0; j < L.cols(); ++j) w.value(L(i, j));
    w.end_array();
    w.end_object();

    const bool err_pass = final_err <= cfg.passive_error_tol;
    w.key("verdicts").begin_object();
    w.kv("final_error", final_err);
    w.kv("max_error", max_err);
    w.kv("error_tolerance", cfg.passive_error_tol);
    w.kv("error_pass", err_pass);
    w.kv("plant_trace_identical", identical);
    w.kv("overall", err_pass && identical ? "pass" : "fail");
    w.kv("exit_code", err_pass && identical ? 0 : 2);
    w.end_object();
    w.end_object();

    out.exit_code = err_pass && identical ? 0 : 2;
    out.report = w.str();
    out.trace = std::move(trace);
    return out;
}

// ---------------------------------------------------------------- probing --

struct Envelopes {
    ExpEnvelope beta_x;
    ExpEnvelope beta_V;
};

Envelopes fit_envelopes(const ScenarioConfig& cfg, const ResolvedSystem& rs) {
    const ClosedLoopSystem& sys = rs.def.sys;
    const double horizon =
        cfg.fit_horizon > 0.0 ? cfg.fit_horizon : rs.def.default_fit_horizon;
    const double h = cfg.h_step;
    const long steps = std::lround(horizon / h);
    std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 101);
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    std::vector<ScalarSeries> norms, lyap;
    for (int i = 0; i < 20; ++i) {
        Vec x0(sys.dim());
        do {
            for (Eigen::Index j = 0; j < x0.size(); ++j) x0[j] = u(rng);
        } while (inf_norm(x0) < 1e-6 || !rs.cert.in_domain(cfg.delta_x * x0 / inf_norm(x0)));
        x0 = cfg.delta_x * x0 / inf_norm(x0);  // on the sphere |x0| = delta_x

        Field f = [&](double, const Vec& x, Vec& dx) {
            Vec y = sys.plant.h(x.head(sys.plant.n_p));
            closed_loop_field(sys, x, y, dx);
        };
        SimulationTrace tr = integrate(f, x0, 0.0, steps * h, h);
        ScalarSeries sn, sv;
        sn.t.reserve(tr.rows());
        sn.v.reserve(tr.rows());
        sv.t.reserve(tr.rows());
        sv.v.reserve(tr.rows());
        for (std::size_t k = 0; k < tr.rows(); ++k) {
            sn.t.push_back(tr.t[k]);
            sn.v.push_back(inf_norm(tr.x[k]));
            sv.t.push_back(tr.t[k]);
            sv.v.push_back(rs.cert.V(tr.x[k]));
        }
        sn.r0 = inf_norm(x0);
        sv.r0 = rs.cert.V(x0);
        norms.push_back(std::move(sn));
        lyap.push_back(std::move(sv));
    }
    Envelopes env;
    env.beta_x = fit_kl_envelope(norms);
    env.beta_V = fit_kl_envelope(lyap);
    return env;
}

PipelineOutput run_probing(const ScenarioConfig& cfg, const ResolvedSystem& rs) {
    const BuiltinSystem& b = rs.def;
    const ClosedLoopSystem& sys = b.sys;
    if (!b.probe || !b.map || !b.certificate || !sys.plant.lie_h)
        throw Error(ErrorKind::config,
                    "probing mode needs a system with a probe signal, "
                    "reconstruction map and certificate (built-ins only)");
    const double t_star = *cfg.t_star;
    const double R = rs.cert.R;

    if (rs.cert.V(rs.x0) > R)
        throw Error(ErrorKind::config,
                    "scenario: x0 must start inside the working level set "
                    "(V(x0) <= alpha1(delta_x))");
    if (inf_norm(rs.x0) > cfg.delta_x)
        throw Error(ErrorKind::config, "scenario: |x0| must not exceed delta_x");

    // sampled constants and decay envelopes
    BoundEstimationParams bp;
    bp.sample_count = cfg.sample_count;
    bp.seed = cfg.seed;
    bp.q = cfg.q;
    bp.t_star = t_star;
    BoundConstants bc = estimate_bound_constants(sys, rs.cert, rs.probe, bp);
    Envelopes env = fit_envelopes(cfg, rs);

    // schedule on the record grid
    const double h_rec = t_star / cfg.rows_per_probe;
    double T_raw, T;
    bool T_auto = !cfg.T.has_value();
    if (T_auto) {
        T_raw = select_period(cfg.delta_x, cfg.eps_xtilde, t_star, env.beta_x, 0.0);
        T = select_period(cfg.delta_x, cfg.eps_xtilde, t_star, env.beta_x, h_rec);
    } else {
        T_raw = *cfg.T;
        const double m = std::ceil((T_raw - t_star) / h_rec - 1e-9);
        T = t_star + std::max(1.0, m) * h_rec;
    }
    ProbingSchedule sched(T, t_star);

    // theta: practical cap keeps the substep count computable
    const int n_y = sys.plant.n_y;
    Vec coeffs = hurwitz_coefficients(cfg.q);
    Mat err_mat = build_matrices(cfg.q, n_y, coeffs, 1.0).error_matrix();
    Mat P = solve_lyapunov(err_mat, cfg.nu);
    Eigen::SelfAdjointEigenSolver<Mat> pe(P);
    const double c_P = std::sqrt(pe.eigenvalues().maxCoeff() / pe.eigenvalues().minCoeff());

    const double hold_substeps =
        cfg.periods * std::ceil((T - t_star) / std::min(cfg.h_step, h_rec));
    const double budget_steps = std::max(1.0, static_cast<double>(cfg.max_steps) - hold_substeps);
    const double theta_cap_practical = 0.1 * budget_steps / (cfg.periods * t_star);
    const double theta_cap = std::min(std::ldexp(1.0, 60), theta_cap_practical);

    const double delta_e0 = init_set_diameter(cfg.eps_y, bc.sup_lift);
    ThetaSelection sel;
    bool theta_auto = !cfg.theta.has_value();
    std::string theta_infeasible;
    if (theta_auto) {
        ThetaSelectionInputs ti;
        ti.t_star = t_star;
        ti.delta_e0 = delta_e0;
        ti.K_xtilde = cfg.K_xtilde;
        ti.nu = cfg.nu;
        ti.phi_bar = bc.phi_bar;
        ti.q = cfg.q;
        ti.P = P;
        ti.rho_psi = rs.map.rho_psi;
        ti.theta_cap = theta_cap;
        try {
            sel = select_theta(ti);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::infeasible) throw;
            theta_infeasible = e.what();
        }
    } else {
        sel.theta = *cfg.theta;
        sel.grid_exponent = -1;
        sel.theta_cap = theta_cap;
        // audit the explicit gain against the same two inequalities
        const double lam_min = pe.eigenvalues().minCoeff();
        const double lam_max = pe.eigenvalues().maxCoeff();
        auto fill = [&](double th, double& clhs, double& crhs, double& alhs,
                        double& arhs) {
            clhs = std::exp(-th * cfg.nu * t_star / (4.0 * lam_min)) * delta_e0;
            crhs = 4.0 * lam_max * bc.phi_bar / (std::pow(th, cfg.q - 1) * cfg.nu);
            alhs = c_P * 4.0 * lam_max * bc.phi_bar / (th * cfg.nu);
            arhs = rs.map.rho_psi.inverse(cfg.K_xtilde);
        };
        fill(sel.theta, sel.convergence_lhs, sel.convergence_rhs,
             sel.accuracy_lhs, sel.accuracy_rhs);
        fill(sel.theta / 2.0, sel.convergence_lhs_half, sel.convergence_rhs_half,
             sel.accuracy_lhs_half, sel.accuracy_rhs_half);
    }

    // stealth feasibility at the resolved schedule
    const double r_level = cfg.r.value_or(R / 10.0);
    if (!(r_level > 0.0) || r_level >= R)
        throw Error(ErrorKind::config, "scenario: r must lie in (0, R)");
    const double sigma_required =
        rs.cert.rho(probe_budget(bc.F, bc.F_star, t_star) * std::exp(bc.L_bar * T));
    double sigma_used;
    bool sigma_explicit = cfg.sigma.has_value();
    if (sigma_explicit) {
        sigma_used = *cfg.sigma;
        if (sigma_used < 0.0 || sigma_used >= R - r_level)
            throw Error(ErrorKind::config, "scenario: sigma must lie in [0, R - r)");
    } else {
        sigma_used = std::min(sigma_required, 0.999 * (R - r_level));
    }
    StealthFeasibility feas = check_stealth_feasibility(
        T, t_star, r_level, R, sigma_used, bc.F, bc.F_star, bc.L_bar, rs.cert.rho,
        env.beta_V);
    if (!sigma_explicit && sigma_required > 0.999 * (R - r_level) && feas.feasible) {
        feas.feasible = false;
        feas.binding = "stealth_budget";
    }

    // assemble the report up to the selection stage so infeasible runs can
    // still explain themselves
    JsonWriter w;
    w.begin_object();
    emit_scenario_section(w, cfg, rs);

    w.key("certificate").begin_object();
    w.kv("R", R);
    w.kv("R_m", rs.cert.R_m);
    w.kv("alpha1_delta_x", rs.cert.alpha1(cfg.delta_x));
    w.kv("alpha2_delta_x", rs.cert.alpha2(cfg.delta_x));
    w.kv("V_x0", rs.cert.V(rs.x0));
    w.end_object();

    w.key("constants").begin_object();
    w.kv("F", bc.F);
    w.kv("F_star", bc.F_star);
    w.kv("l_x", bc.l_x);
    w.kv("l_y", bc.l_y);
    w.kv("l_h", bc.l_h);
    w.kv("L_bar", bc.L_bar);
    w.kv("phi_bar", bc.phi_bar);
    w.kv("sup_lift", bc.sup_lift);
    w.kv("delta_e0", delta_e0);
    w.key("raw").begin_object();
    w.kv("F", bc.raw.F);
    w.kv("F_star", bc.raw.F_star);
    w.kv("l_x", bc.raw.l_x);
    w.kv("l_y", bc.raw.l_y);
    w.kv("l_h", bc.raw.l_h);
    w.kv("phi_bar", bc.raw.phi_bar);
    w.kv("sup_lift", bc.raw.sup_lift);
    w.end_object();
    w.key("envelopes").begin_object();
    w.key("beta_x").begin_object();
    w.kv("c1", env.beta_x.c1);
    w.kv("c2", env.beta_x.c2);
    w.end_object();
    w.key("beta_V").begin_object();
    w.kv("c1", env.beta_V.c1);
    w.kv("c2", env.beta_V.c2);
    w.end_object();
    w.end_object();
    w.end_object();

    w.key("selection").begin_object();
    w.kv("T", T);
    w.kv("T_before_rounding", T_raw);
    w.kv("T_auto", T_auto);
    w.kv("t_star", t_star);
    w.kv("h_record", h_rec);
    w.kv("r", r_level);
    w.kv("sigma_used", sigma_used);
    w.kv("sigma_required", sigma_required);
    w.kv("sigma_explicit", sigma_explicit);
    w.key("stealth_feasibility").begin_object();
    w.kv("level_lhs", feas.level_lhs);
    w.kv("level_rhs", feas.level_rhs);
    w.kv("level_margin", feas.level_margin);
    w.kv("budget_lhs", feas.budget_lhs);
    w.kv("budget_rhs", feas.budget_rhs);
    w.kv("budget_margin", feas.budget_margin);
    w.kv("feasible", feas.feasible);
    w.kv("binding", feas.binding.empty() ? "none" : feas.binding);
    w.end_object();
    w.end_object();

    w.key("theta_audit").begin_object();
    w.kv("auto", theta_auto);
    w.kv("theta_cap", theta_cap);
    if (!theta_infeasible.empty()) {
        w.kv("infeasible", true);
        w.kv("binding", theta_infeasible.find("residual_accuracy") != std::string::npos
                            ? "residual_accuracy"
                            : (theta_infeasible.find("probe_convergence") != std::string::npos
                                   ? "probe_convergence"
                                   : "both"));
        w.kv("message", theta_infeasible);
        w.end_object();

        w.key("verdicts").begin_object();
        w.kv("overall", "infeasible");
        w.kv("exit_code", 3);
        w.end_object();
        w.end_object();
        PipelineOutput out;
        out.exit_code = 3;
        out.report = w.str();
        return out;
    }
    w.kv("infeasible", false);
    w.kv("theta", sel.theta);
    w.kv("grid_exponent", sel.grid_exponent);
    w.kv("convergence_lhs", sel.convergence_lhs);
    w.kv("convergence_rhs", sel.convergence_rhs);
    w.kv("accuracy_lhs", sel.accuracy_lhs);
    w.kv("accuracy_rhs", sel.accuracy_rhs);
    w.key("at_half_theta").begin_object();
    w.kv("convergence_lhs", sel.convergence_lhs_half);
    w.kv("convergence_rhs", sel.convergence_rhs_half);
    w.kv("accuracy_lhs", sel.accuracy_lhs_half);
    w.kv("accuracy_rhs", sel.accuracy_rhs_half);
    w.end_object();
    w.end_object();

    // explicit stealth budgets gate the run; auto budgets are advisory
    if (sigma_explicit && !feas.feasible) {
        w.key("verdicts").begin_object();
        w.kv("overall", "infeasible");
        w.kv("reason", "stealth feasibility failed at the requested sigma");
        w.kv("binding", feas.binding);
        w.kv("exit_code", 3);
        w.end_object();
        w.end_object();
        PipelineOutput out;
        out.exit_code = 3;
        out.report = w.str();
        return out;
    }

    // probed co-simulation
    LiftedMatrices mats = build_matrices(cfg.q, n_y, coeffs, sel.theta);
    ProbedRunSetup setup;
    setup.sys = sys;
    setup.schedule = sched;
    setup.probe = rs.probe;
    setup.mats = mats;
    setup.map = rs.map;
    setup.eps_y = cfg.eps_y;
    setup.periods = cfg.periods;
    setup.x0 = rs.x0;
    setup.rows_per_probe = cfg.rows_per_probe;
    setup.h_plant = cfg.h_step;
    setup.escape_bound = cfg.escape_bound;
    setup.truncate_on_escape = true;
    SimulationTrace trace = run_probed_estimation(setup);

    StealthVerdict stealth =
        verify_stealth(trace, rs.cert, cfg.delta_x, env.beta_V, sched);

    EstimationBoundParams ep;
    ep.K_xtilde = cfg.K_xtilde;
    ep.delta_x = cfg.delta_x;
    ep.eps_xtilde = cfg.eps_xtilde;
    ep.delta_e = delta_e0;
    ep.theta = sel.theta;
    ep.q = cfg.q;
    ep.c = c_P;
    ep.rho_psi = rs.map.rho_psi;
    ep.beta_x_fit = env.beta_x;
    EstimationVerdict est;
    bool estimation_ok = false;
    if (!trace.escape_time) {
        est = verify_estimation(trace, sched, ep);
        estimation_ok = est.pass;
        // V at the end of each probe window, for the period table
        const long rows_per_T = std::lround(T / h_rec);
        const long probe_rows = std::lround(t_star / h_rec);
        for (auto& rec : est.periods)
            rec.V_end_probe = rs.cert.V(trace.x[rec.k * rows_per_T + probe_rows]);
    }

    LyapunovDiagnostics lyap = lyapunov_along_trace(rs.cert, trace);

    w.key("period_table").begin_array();
    for (const auto& rec : est.periods) {
        w.begin_object();
        w.kv("k", rec.k);
        w.kv("err_end_probe", rec.err_end_probe);
        w.kv("bound_end_probe", rec.bound_end_probe);
        w.kv("err_in_interval", rec.err_in_interval);
        w.kv("bound_in_interval", rec.bound_in_interval);
        w.kv("err_end_period", rec.err_end_period);
        w.kv("bound_end_period", rec.bound_end_period);
        w.kv("V_end_probe", rec.V_end_probe);
        w.kv("level_R", R);
        w.kv("pass", rec.pass);
        w.end_object();
    }
    w.end_array();

    const bool all_pass = stealth.pass && estimation_ok;
    w.key("verdicts").begin_object();
    w.key("stealth").begin_object();
    w.kv("K_x", stealth.K_x);
    w.kv("max_x", stealth.max_x);
    w.kv("level_violations", stealth.level_violations);
    w.kv("escaped", stealth.escaped);
    if (stealth.escaped) w.kv("escape_time", stealth.escape_time);
    w.kv("pass", stealth.pass);
    w.end_object();
    w.key("estimation").begin_object();
    w.kv("periods_checked", static_cast<long>(est.periods.size()));
    w.kv("pass", estimation_ok);
    w.end_object();
    w.key("lyapunov").begin_object();
    w.kv("hold_increase_flags", static_cast<long>(lyap.increase_flags.size()));
    w.kv("max_hold_increase", lyap.max_increase);
    w.end_object();
    w.kv("overall", all_pass ? "pass" : "fail");
    w.kv("exit_code", all_pass ? 0 : 2);
    w.end_object();
    w.end_object();

    PipelineOutput out;
    out.exit_code = all_pass ? 0 : 2;
    out.report = w.str();
    out.trace = std::move(trace);
    return out;
}

std::string error_report(const ScenarioConfig* cfg, const Error& e) {
    JsonWriter w;
    w.begin_object();
    if (cfg) {
        w.key("scenario").begin_object();
        w.kv("name", cfg->name);
        w.kv("system", cfg->system);
        w.end_object();
    }
    w.key("error").begin_object();
    w.kv("kind", error_kind_name(e.kind()));
    w.kv("message", e.what());
    w.end_object();
    int code = e.kind() == ErrorKind::infeasible ? 3
               : e.kind() == ErrorKind::escape   ? 2
                                                 : 4;
    w.key("verdicts").begin_object();
    w.kv("overall", "error");
    w.kv("exit_code", code);
    w.end_object();
    w.end_object();
    return w.str();
}

}  // namespace

RunResult run_scenario(const ScenarioConfig& config, const std::string& out_dir) {
    RunResult res;
    const std::string stem = config.name.empty() ? config.system : config.name;
    std::filesystem::create_directories(out_dir);
    res.trace_path = (std::filesystem::path(out_dir) / (stem + ".trace.csv")).string();
    res.report_path = (std::filesystem::path(out_dir) / (stem + ".report.json")).string();

    PipelineOutput out;
    try {
        config.validate();
        ResolvedSystem rs = resolve_system(config);
        out = config.mode == ScenarioMode::passive ? run_passive(config, rs)
                                                   : run_probing(config, rs);
    } catch (const Error& e) {
        out.exit_code = e.kind() == ErrorKind::infeasible ? 3
                        : e.kind() == ErrorKind::escape   ? 2
                                                          : 4;
        out.report = error_report(&config, e);
    }
    res.exit_code = out.exit_code;
    res.report_json = out.report;
    res.trace = std::move(out.trace);
    write_text_file(res.report_path, res.report_json + "\n");
    if (res.trace.rows() > 0) res.trace.write_csv(res.trace_path);
    return res;
}

int run_scenario_file(const std::string& path, const std::string& out_dir,
                      const std::map<std::string, std::string>& overrides) {
    ScenarioConfig cfg;
    try {
        cfg = load_scenario(path);
        for (const auto& [k, v] : overrides) apply_kv(cfg, k, v, "<override>");
    } catch (const Error& e) {
        const std::string stem = std::filesystem::path(path).stem().string();
        std::filesystem::create_directories(out_dir);
        write_text_file(
            (std::filesystem::path(out_dir) / (stem + ".report.json")).string(),
            error_report(nullptr, e) + "\n");
        return e.kind() == ErrorKind::infeasible ? 3 : 4;
    }
    return run_scenario(cfg, out_dir).exit_code;
}

}  // namespace probest
