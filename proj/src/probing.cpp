#include "probest/probing.hpp"

#include <cmath>

namespace probest {

ProbeSignal make_constant_probe(const Vec& ybar, int smoothness_order) {
    ProbeSignal p;
    p.n_y = static_cast<int>(ybar.size());
    p.smoothness_order = smoothness_order;
    Vec zero = Vec::Zero(ybar.size());
    p.value = [ybar](double) { return ybar; };
    p.derivative = [ybar, zero](double, int i) { return i == 0 ? ybar : zero; };
    return p;
}

ProbingSchedule::ProbingSchedule(double period, double probe_duration)
    : T(period), t_star(probe_duration) {
    if (!(T > 0.0))
        throw Error(ErrorKind::config, "schedule: period must be positive");
    if (t_star < 0.0 || t_star >= T)
        throw Error(ErrorKind::config,
                    "schedule: probe duration must satisfy 0 <= t* < T");
}

Classification classify(double t, const ProbingSchedule& schedule) {
    if (t < 0.0) throw Error(ErrorKind::config, "classify: negative time");
    const double T = schedule.T;
    const double tol = 1e-9 * std::max(1.0, T);
    long k = static_cast<long>(std::floor(t / T));
    double offset = t - static_cast<double>(k) * T;
    // snap to period edges so grid times a hair off a boundary classify as
    // the boundary itself
    if (offset >= T - tol) {
        ++k;
        offset = 0.0;
    } else if (offset < tol) {
        offset = 0.0;
    }
    if (std::abs(offset - schedule.t_star) < tol) offset = schedule.t_star;
    Classification c;
    c.k = k;
    c.offset = offset;
    c.probing = offset < schedule.t_star;
    return c;
}

Vec probe_derivative_stack(const ProbeSignal& probe, double s, int q) {
    if (s < -1e-12 || q > probe.smoothness_order)
        throw Error(ErrorKind::config, "probe stack: offset or order out of range");
    Vec stack((q + 1) * probe.n_y);
    for (int i = 0; i <= q; ++i) {
        Vec d = probe.derivative(s, i);
        if (d.size() != probe.n_y)
            throw Error(ErrorKind::model, "probe stack: derivative dimension mismatch");
        stack.segment(i * probe.n_y, probe.n_y) = d;
    }
    return stack;
}

double select_period(double delta_x, double eps_xtilde, double t_star,
                     const ExpEnvelope& beta_x_fit, double h_grid) {
    if (beta_x_fit.degenerate()) {
        // never leaves the origin: any period works
        double T = t_star;
        if (h_grid > 0.0) T = t_star + h_grid;
        return T;
    }
    if (!(beta_x_fit.c2 > 0.0))
        throw Error(ErrorKind::infeasible,
                    "select_period: fitted envelope has no decay (c2 <= 0)");
    double wait = 0.0;
    if (beta_x_fit.c1 * delta_x > eps_xtilde)
        wait = std::log(beta_x_fit.c1 * delta_x / eps_xtilde) / beta_x_fit.c2;
    double T = t_star + std::max(0.0, wait);
    if (h_grid > 0.0) {
        // rounding up preserves the inequality (the envelope is non-increasing)
        double m = std::ceil((T - t_star) / h_grid - 1e-12);
        if (m < 1.0) m = 1.0;
        T = t_star + m * h_grid;
    }
    return T;
}

StealthFeasibility check_stealth_feasibility(double T, double t_star, double r,
                                             double R, double sigma, double F,
                                             double F_star, double L_bar,
                                             const KFunction& rho,
                                             const ExpEnvelope& beta_V_fit) {
    StealthFeasibility out;
    out.level_lhs = r;
    out.level_rhs = beta_V_fit(R, t_star);
    out.level_margin = out.level_rhs - out.level_lhs;

    out.budget_lhs = probe_budget(F, F_star, t_star);
    out.budget_rhs = rho.inverse(sigma) * std::exp(-L_bar * T);
    out.budget_margin = out.budget_rhs - out.budget_lhs;

    out.feasible = out.level_margin >= 0.0 && out.budget_margin >= 0.0;
    if (!out.feasible)
        out.binding = out.budget_margin < 0.0 ? "stealth_budget" : "level_recovery";
    return out;
}

}  // namespace probest
