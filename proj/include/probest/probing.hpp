#pragma once

#include <functional>
#include <string>

#include "probest/common.hpp"
#include "probest/kfun.hpp"

namespace probest {

/**
 * Open-loop probing signal on [0, t_star], smooth enough to carry a
 * derivative stack up to the declared order.
 */
struct ProbeSignal {
    /// y*(s) for s in [0, t_star]
    std::function<Vec(double)> value;
    /// i-th derivative of y*, i = 0 .. smoothness_order; order 0 is y* itself
    std::function<Vec(double, int)> derivative;
    int smoothness_order = 0;
    int n_y = 0;
};

/// Constant probe y*(s) = ybar with all derivatives zero.
ProbeSignal make_constant_probe(const Vec& ybar, int smoothness_order);

/**
 * Periodic dual-mode schedule. Period [kT, (k+1)T) splits into the probing
 * interval [kT, kT + t_star) and the hold interval [kT + t_star, (k+1)T),
 * both right-open. t_star = 0 is the degenerate always-silent schedule.
 */
struct ProbingSchedule {
    double T = 0.0;
    double t_star = 0.0;

    ProbingSchedule() = default;
    ProbingSchedule(double period, double probe_duration);
};

struct Classification {
    bool probing = false;
    long k = 0;        // period index
    double offset = 0; // t - kT
};

/// Classifies a time instant against the schedule. Boundary values within
/// 1e-9 * max(1, T) of a period edge snap to the edge.
Classification classify(double t, const ProbingSchedule& schedule);

/// Stacked derivatives (y*(s), y*'(s), ..., y*^(q)(s)), length (q+1)*n_y.
Vec probe_derivative_stack(const ProbeSignal& probe, double s, int q);

/**
 * Period selection from the fitted decay envelope: the smallest T with
 * beta_x(Delta_x, T - t_star) <= eps_xtilde, rounded up to a multiple of
 * h_grid when h_grid > 0.
 */
double select_period(double delta_x, double eps_xtilde, double t_star,
                     const ExpEnvelope& beta_x_fit, double h_grid = 0.0);

/// Accumulated perturbation pushed into the loop by one probe window.
inline double probe_budget(double F, double F_star, double t_star) {
    return (F + F_star) * t_star;
}

/**
 * Margins of the two joint stealth inequalities:
 *   level recovery:  r <= beta_V(R, t_star)
 *   stealth budget:  (F + F*) t_star <= rho^{-1}(sigma) e^{-Lbar T}
 * Infeasibility is an outcome, not an error; margins say which side binds.
 */
struct StealthFeasibility {
    double level_lhs = 0, level_rhs = 0;    // r vs beta_V(R, t*)
    double budget_lhs = 0, budget_rhs = 0;  // (F+F*)t* vs rho^-1(sigma) e^-LT
    double level_margin = 0;                // rhs - lhs
    double budget_margin = 0;
    bool feasible = false;
    std::string binding;  // "level_recovery" or "stealth_budget" when infeasible
};

StealthFeasibility check_stealth_feasibility(double T, double t_star, double r,
                                             double R, double sigma, double F,
                                             double F_star, double L_bar,
                                             const KFunction& rho,
                                             const ExpEnvelope& beta_V_fit);

}  // namespace probest
