#include "probest/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace probest {

namespace {

constexpr double kSupInflation = 1.2;
constexpr double kPhiInflation = 1.5;

Vec sample_box(std::mt19937_64& rng, int dim, double radius) {
    std::uniform_real_distribution<double> u(-radius, radius);
    Vec x(dim);
    for (int i = 0; i < dim; ++i) x[i] = u(rng);
    return x;
}

Vec sample_sign_corner(std::mt19937_64& rng, int dim) {
    std::bernoulli_distribution b(0.5);
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = b(rng) ? 1.0 : -1.0;
    return v;
}

}  // namespace

BoundConstants estimate_bound_constants(const ClosedLoopSystem& sys,
                                        const LyapunovCertificate& cert,
                                        const ProbeSignal& probe,
                                        const BoundEstimationParams& params) {
    if (params.sample_count < 1000)
        throw Error(ErrorKind::config,
                    "estimate_bound_constants: need at least 10^3 samples");
    const int n = sys.dim();
    const int n_p = sys.plant.n_p;
    const double level = cert.R + cert.R_m;
    const double box = cert.alpha1.inverse(level);
    std::mt19937_64 rng(params.seed * 0x9e3779b97f4a7c15ULL + 17);

    // rejection sample the extended sublevel set
    std::vector<Vec> states;
    states.reserve(params.sample_count);
    long attempts = 0;
    while (static_cast<int>(states.size()) < params.sample_count) {
        if (++attempts > 400L * params.sample_count)
            throw Error(ErrorKind::numerical,
                        "estimate_bound_constants: sublevel set rejection "
                        "sampling starved");
        Vec x = sample_box(rng, n, box);
        if (cert.V(x) <= level && cert.in_domain(x)) states.push_back(std::move(x));
    }

    // probe offsets for the probed-field supremum
    std::vector<double> offsets{0.0};
    if (params.t_star > 0.0)
        for (int i = 1; i <= 8; ++i) offsets.push_back(params.t_star * i / 8.0);

    BoundConstants bc;
    std::vector<Vec> outputs;  // operating outputs for the y-Lipschitz sweep
    for (const Vec& x : states) {
        Vec h_val = sys.plant.h(x.head(n_p));
        Vec f_nom = closed_loop_field(sys, x, h_val);
        if (!f_nom.allFinite())
            throw Error(ErrorKind::model,
                        "estimate_bound_constants: unbounded field sample");
        bc.raw.F = std::max(bc.raw.F, inf_norm(f_nom));
        for (double s : offsets) {
            Vec f_probe = closed_loop_field(sys, x, probe.value(s));
            bc.raw.F_star = std::max(bc.raw.F_star, inf_norm(f_probe));
        }
        if (outputs.size() < 64) outputs.push_back(h_val);
    }
    for (double s : offsets) outputs.push_back(probe.value(s));

    // Lipschitz constants by symmetric differences; sign-corner directions
    // pick up the induced infinity norm quickly on (near-)linear fields
    const double eps = params.fd_eps * std::max(1.0, box);
    const int pair_count = std::max(256, params.sample_count / 8);
    std::uniform_int_distribution<std::size_t> pick(0, states.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_y(0, outputs.size() - 1);
    for (int i = 0; i < pair_count; ++i) {
        const Vec& x = states[pick(rng)];
        const Vec& y = outputs[pick_y(rng)];
        Vec v = sample_sign_corner(rng, n);
        Vec fp = closed_loop_field(sys, x + eps * v, y);
        Vec fm = closed_loop_field(sys, x - eps * v, y);
        bc.raw.l_x = std::max(bc.raw.l_x, inf_norm(fp - fm) / (2.0 * eps));

        Vec w = sample_sign_corner(rng, sys.plant.n_y);
        fp = closed_loop_field(sys, x, y + eps * w);
        fm = closed_loop_field(sys, x, y - eps * w);
        bc.raw.l_y = std::max(bc.raw.l_y, inf_norm(fp - fm) / (2.0 * eps));

        Vec vp = sample_sign_corner(rng, n_p);
        Vec hp = sys.plant.h(x.head(n_p) + eps * vp);
        Vec hm = sys.plant.h(x.head(n_p) - eps * vp);
        bc.raw.l_h = std::max(bc.raw.l_h, inf_norm(hp - hm) / (2.0 * eps));
    }

    // derivative compacts along probed trajectories started inside the
    // working level set
    if (sys.plant.lie_h && params.t_star > 0.0) {
        const double h_sim = params.t_star / 512.0;
        for (int traj = 0; traj < params.trajectory_count; ++traj) {
            Vec x0 = states[pick(rng)];
            for (std::size_t tries = 0;
                 cert.V(x0) > cert.R && tries < 40 * states.size(); ++tries)
                x0 = states[pick(rng)];
            if (cert.V(x0) > cert.R)
                throw Error(ErrorKind::numerical,
                            "estimate_bound_constants: no sample inside the "
                            "working level set");
            Vec x = x0;
            detail::Rk4Workspace ws;
            ws.resize(n);
            Field f = [&](double s, const Vec& xs, Vec& dxs) {
                closed_loop_field(sys, xs, probe.value(s), dxs);
            };
            for (int step = 0; step <= 512; ++step) {
                const double s = step * h_sim;
                Vec stack = probe_derivative_stack(probe, std::min(s, params.t_star),
                                                   params.q + 1);
                for (int i = 1; i <= params.q; ++i)
                    bc.raw.sup_lift =
                        std::max(bc.raw.sup_lift, inf_norm(sys.plant.lie_h(x, stack, i)));
                bc.raw.phi_bar = std::max(
                    bc.raw.phi_bar, inf_norm(sys.plant.lie_h(x, stack, params.q + 1)));
                if (step < 512) ws.step(f, s, h_sim, x);
            }
        }
    }

    bc.F = kSupInflation * bc.raw.F;
    bc.F_star = kSupInflation * bc.raw.F_star;
    bc.l_x = kSupInflation * bc.raw.l_x;
    bc.l_y = kSupInflation * bc.raw.l_y;
    bc.l_h = kSupInflation * bc.raw.l_h;
    bc.L_bar = bc.l_x + bc.l_y * bc.l_h;
    bc.phi_bar = kPhiInflation * bc.raw.phi_bar;
    bc.sup_lift = kSupInflation * bc.raw.sup_lift;

    const bool sampled_lift = sys.plant.lie_h && params.t_star > 0.0;
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    if (!positive(bc.F) || !positive(bc.F_star) || !positive(bc.l_x) ||
        !positive(bc.l_y) || !positive(bc.l_h) ||
        (sampled_lift && (!positive(bc.phi_bar) || !positive(bc.sup_lift))))
        throw Error(ErrorKind::numerical,
                    "estimate_bound_constants: a sampled constant came out "
                    "nonpositive or non-finite");
    return bc;
}

ExpEnvelope fit_kl_envelope(const std::vector<ScalarSeries>& ensemble) {
    if (ensemble.size() < 10)
        throw Error(ErrorKind::config, "fit_kl_envelope: need at least 10 traces");
    const std::size_t n_t = ensemble.front().t.size();
    for (const auto& s : ensemble)
        if (s.t.size() != n_t || s.v.size() != n_t)
            throw Error(ErrorKind::config, "fit_kl_envelope: ragged ensemble");

    // pointwise max of the normalized ensemble
    std::vector<double> env(n_t, 0.0);
    double max_r0 = 0.0;
    for (const auto& s : ensemble) max_r0 = std::max(max_r0, s.r0);
    if (max_r0 <= 1e-300) {
        ExpEnvelope e;
        e.c1 = 1.0;
        e.c2 = std::numeric_limits<double>::infinity();
        return e;  // everything already at the origin
    }
    for (const auto& s : ensemble) {
        if (s.r0 <= 1e-300) continue;
        for (std::size_t i = 0; i < n_t; ++i)
            env[i] = std::max(env[i], s.v[i] / s.r0);
    }
    const double env_max = *std::max_element(env.begin(), env.end());

    // least squares on log(env) over samples above the numerical floor
    double sum_t = 0, sum_tt = 0, sum_l = 0, sum_tl = 0;
    long count = 0;
    const std::size_t stride = std::max<std::size_t>(1, n_t / 4000);
    const std::vector<double>& tgrid = ensemble.front().t;
    for (std::size_t i = 0; i < n_t; i += stride) {
        if (env[i] < 1e-12 * env_max) continue;
        const double l = std::log(env[i]);
        sum_t += tgrid[i];
        sum_tt += tgrid[i] * tgrid[i];
        sum_l += l;
        sum_tl += tgrid[i] * l;
        ++count;
    }
    if (count < 3)
        throw Error(ErrorKind::numerical, "fit_kl_envelope: too few usable samples");
    const double denom = count * sum_tt - sum_t * sum_t;
    if (std::abs(denom) < 1e-300)
        throw Error(ErrorKind::numerical, "fit_kl_envelope: degenerate time grid");
    const double slope = (count * sum_tl - sum_t * sum_l) / denom;
    const double intercept = (sum_l - slope * sum_t) / count;

    ExpEnvelope fit;
    fit.c2 = -slope;
    if (!(fit.c2 > 1e-12))
        throw Error(ErrorKind::numerical,
                    "fit_kl_envelope: ensemble does not decay (stability "
                    "violation for this scenario)");
    fit.c1 = kSupInflation * std::exp(intercept);
    if (fit.c1 < 1.0) fit.c1 = 1.0;

    // raise c1 until the curve dominates every sample above the numerical
    // floor; work in logs so late samples cannot overflow the requirement
    double log_needed = std::log(fit.c1);
    for (std::size_t i = 0; i < n_t; ++i) {
        if (env[i] < 1e-12 * env_max) continue;
        log_needed = std::max(log_needed, std::log(env[i]) + fit.c2 * tgrid[i]);
    }
    if (log_needed > 700.0)
        throw Error(ErrorKind::numerical,
                    "fit_kl_envelope: domination requires an absurd c1; the "
                    "ensemble is not exponentially decaying");
    fit.c1 = std::exp(log_needed);
    return fit;
}

GronwallReport gronwall_check(const ClosedLoopSystem& sys,
                              const LyapunovCertificate& cert,
                              const std::function<Vec(double)>& d, double T,
                              const Vec& x0, double L_bar,
                              const ExpEnvelope& beta_V_fit, double h_step) {
    GronwallReport rep;
    Field nominal = [&](double, const Vec& w, Vec& dw) {
        Vec y = sys.plant.h(w.head(sys.plant.n_p));
        closed_loop_field(sys, w, y, dw);
    };
    Field perturbed = [&](double t, const Vec& x, Vec& dx) {
        Vec y = sys.plant.h(x.head(sys.plant.n_p));
        closed_loop_field(sys, x, y, dx);
        dx += d(t);
    };
    SimulationTrace wt = integrate(nominal, x0, 0.0, T, h_step);
    SimulationTrace xt = integrate(perturbed, x0, 0.0, T, h_step);

    // running integral of d on the grid (trapezoid), plus its max norm
    Vec acc = Vec::Zero(sys.dim());
    Vec d_prev = d(0.0);
    rep.d_bar = 0.0;
    for (std::size_t i = 1; i < xt.rows(); ++i) {
        Vec d_cur = d(xt.t[i]);
        acc += 0.5 * h_step * (d_prev + d_cur);
        d_prev = d_cur;
        rep.d_bar = std::max(rep.d_bar, inf_norm(acc));
    }
    rep.deviation_bound = rep.d_bar * std::exp(L_bar * T);
    rep.sigma = cert.rho(rep.deviation_bound);

    const double V0 = cert.V(x0);
    for (std::size_t i = 0; i < xt.rows(); ++i) {
        const double dev = inf_norm(xt.x[i] - wt.x[i]);
        rep.max_deviation = std::max(rep.max_deviation, dev);
        if (dev > rep.deviation_bound * (1.0 + 1e-9) + 1e-12)
            ++rep.deviation_violations;
        const double bound = beta_V_fit(V0, xt.t[i]) + rep.sigma;
        if (cert.V(xt.x[i]) > bound * (1.0 + 1e-9) + 1e-12)
            ++rep.lyapunov_violations;
    }
    rep.pass = rep.deviation_violations == 0 && rep.lyapunov_violations == 0;
    return rep;
}

StealthVerdict verify_stealth(const SimulationTrace& trace,
                              const LyapunovCertificate& cert, double delta_x,
                              const ExpEnvelope& beta_V_fit,
                              const ProbingSchedule& schedule) {
    StealthVerdict v;
    const double R = cert.alpha1(delta_x);
    v.K_x = cert.alpha1.inverse(beta_V_fit(R, 0.0) + R);
    if (trace.escape_time) {
        v.escaped = true;
        v.escape_time = *trace.escape_time;
        v.pass = false;
        return v;
    }
    for (const Vec& x : trace.x) v.max_x = std::max(v.max_x, inf_norm(x));

    if (schedule.T > 0.0 && schedule.t_star > 0.0 && trace.h_step > 0.0) {
        const double t_end = trace.t.back();
        for (long k = 0;; ++k) {
            const double t_probe_end = k * schedule.T + schedule.t_star;
            if (t_probe_end > t_end + 1e-12) break;
            const auto idx =
                static_cast<std::size_t>(std::lround((t_probe_end - trace.t0) / trace.h_step));
            if (idx >= trace.rows()) break;
            if (cert.V(trace.x[idx]) > R * (1.0 + 1e-12)) ++v.level_violations;
        }
    }
    v.pass = v.max_x <= v.K_x && v.level_violations == 0;
    return v;
}

EstimationVerdict verify_estimation(const SimulationTrace& trace,
                                    const ProbingSchedule& schedule,
                                    const EstimationBoundParams& params) {
    if (trace.xhat.empty())
        throw Error(ErrorKind::config, "verify_estimation: trace has no estimates");
    EstimationVerdict out;
    out.pass = true;
    if (trace.escape_time) {
        out.pass = false;
        return out;
    }
    const double h = trace.h_step;
    const long rows_per_T = std::lround(schedule.T / h);
    const long probe_rows = std::lround(schedule.t_star / h);
    const long n_periods = (static_cast<long>(trace.rows()) - 1) / rows_per_T;

    const double transient_bound =
        params.rho_psi(params.c * params.delta_e * std::pow(params.theta, params.q - 1));
    const double hold_bound = params.K_xtilde + params.delta_x +
                              params.beta_x_fit(params.delta_x, 0.0);

    for (long k = 0; k < n_periods; ++k) {
        PeriodRecord rec;
        rec.k = k;
        const long base = k * rows_per_T;
        rec.bound_end_probe = params.K_xtilde;
        rec.err_end_probe =
            inf_norm(trace.xhat[base + probe_rows] - trace.x[base + probe_rows]);
        rec.bound_in_interval = std::max(transient_bound, hold_bound);
        for (long i = base; i < base + rows_per_T; ++i)
            rec.err_in_interval = std::max(
                rec.err_in_interval, inf_norm(trace.xhat[i] - trace.x[i]));
        rec.bound_end_period = params.K_xtilde + params.delta_x + params.eps_xtilde;
        rec.err_end_period = inf_norm(trace.xhat[base + rows_per_T] -
                                      trace.x[base + rows_per_T]);
        rec.pass = rec.err_end_probe < rec.bound_end_probe &&
                   rec.err_in_interval < rec.bound_in_interval &&
                   rec.err_end_period < rec.bound_end_period;
        out.pass = out.pass && rec.pass;
        out.periods.push_back(rec);
    }
    return out;
}

LyapunovDiagnostics lyapunov_along_trace(const LyapunovCertificate& cert,
                                         const SimulationTrace& trace,
                                         double tol_per_step) {
    LyapunovDiagnostics diag;
    diag.V.reserve(trace.rows());
    for (const Vec& x : trace.x) diag.V.push_back(cert.V(x));
    for (std::size_t i = 1; i < trace.rows(); ++i) {
        const bool hold_step = trace.mode.empty() ||
                               (trace.mode[i - 1] == 0 && trace.mode[i] == 0);
        if (!hold_step) continue;
        const double rise = diag.V[i] - diag.V[i - 1];
        if (rise > tol_per_step) {
            diag.increase_flags.push_back(i);
            diag.max_increase = std::max(diag.max_increase, rise);
        }
    }
    return diag;
}

}  // namespace probest
