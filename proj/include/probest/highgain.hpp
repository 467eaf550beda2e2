#pragma once

#include <functional>
#include <string>

#include "probest/common.hpp"
#include "probest/dynamics.hpp"
#include "probest/kfun.hpp"
#include "probest/probing.hpp"

namespace probest {

/**
 * Matrices of the lifted-coordinate estimator
 *
 *   d/dt Yhat = A_hat Yhat + theta * Delta * H_hat * (y - C_hat Yhat)
 *
 * A_hat is the shift matrix with an identity super-block, C_hat selects the
 * first block, H_hat stacks the coefficient blocks a_1 I ... a_{q+1} I and
 * Delta = diag(I, theta I, ..., theta^q I). Two structural identities hold
 * exactly: Delta^{-1} A_hat Delta = theta A_hat and C_hat Delta = C_hat.
 */
struct LiftedMatrices {
    int q = 0;
    int n_y = 0;
    double theta = 1.0;
    Vec coeffs;  // a_1 .. a_{q+1}
    Mat A_hat;   // (q+1)n_y square
    Mat C_hat;   // n_y x (q+1)n_y
    Mat H_hat;   // (q+1)n_y x n_y
    Mat Delta;
    Mat Delta_inv;
    Mat gain;  // theta * Delta * H_hat, precomputed

    int dim() const { return (q + 1) * n_y; }
    /// A_hat - H_hat C_hat, the Hurwitz matrix of the rescaled error dynamics.
    Mat error_matrix() const { return A_hat - H_hat * C_hat; }
};

/// Coefficients making s^{q+1} + a_1 s^q + ... + a_{q+1} = (s+1)^{q+1}:
/// the binomial row, all roots at -1.
Vec hurwitz_coefficients(int q);

/// Builds the estimator matrices; rejects non-Hurwitz coefficient sets.
LiftedMatrices build_matrices(int q, int n_y, const Vec& coeffs, double theta);

/**
 * Solves P M + M^T P = -nu I for symmetric positive definite P (direct
 * linear solve in the entries of P). M must be Hurwitz. The residual
 * P M + M^T P + nu I is verified to have max eigenvalue <= 1e-8.
 */
Mat solve_lyapunov(const Mat& M, double nu);

struct ThetaSelectionInputs {
    double t_star = 0;
    double delta_e0 = 0;  // diameter of the admissible initialization set
    double K_xtilde = 0;  // end-of-probe estimation error target
    double nu = 1.0;
    double phi_bar = 0;  // bound on the (q+1)-th output derivative
    int q = 1;
    Mat P;               // from solve_lyapunov on the error matrix
    KFunction rho_psi;   // modulus of the observability map
    double theta_cap = 1.152921504606846976e18;  // 2^60
};

struct ThetaSelection {
    double theta = 1.0;
    int grid_exponent = 0;
    // both inequality sides at the selected theta and at theta/2
    double convergence_lhs = 0, convergence_rhs = 0;
    double accuracy_lhs = 0, accuracy_rhs = 0;
    double convergence_lhs_half = 0, convergence_rhs_half = 0;
    double accuracy_lhs_half = 0, accuracy_rhs_half = 0;
    double theta_cap = 0;
};

/**
 * Scans theta over {2^j : j = 0, 1, ...} up to the cap and returns the
 * smallest value satisfying both tuning inequalities:
 *
 *   convergence:  exp(-theta nu t* / (4 lambda_min)) * Delta_e0
 *                     <= 4 lambda_max phi_bar / (theta^{q-1} nu)
 *   accuracy:     c * 4 lambda_max phi_bar / (theta nu) <= rho_psi^{-1}(K)
 *
 * with c = sqrt(lambda_max/lambda_min) of P. Throws an infeasibility error
 * naming the inequality that still fails at the largest admissible theta.
 */
ThetaSelection select_theta(const ThetaSelectionInputs& in);

/**
 * Reconstruction x = Psi(Y, Y*) promised by the robust-observability
 * property, with its modulus rho_psi.
 */
struct ObservabilityMap {
    int q = 0;
    std::function<Vec(const Vec& Y, const Vec& Y_star)> psi;
    KFunction rho_psi;
};

/// Estimator state between steps. Yhat is frozen on hold intervals.
struct ObserverRunState {
    Vec Yhat;
    double eps_y = 0;
    long k = 0;  // current period index
};

/// Initialization at a period start: first block is the measured output,
/// higher derivative blocks zero.
Vec initialize_observer(const Vec& y_meas, int q, double eps_y);

/// Diameter of the admissible initialization set given the sampled bound
/// on the lifted derivative blocks.
inline double init_set_diameter(double eps_y, double sup_lift) {
    return 2.0 * std::max(eps_y, sup_lift);
}

/// Estimator right-hand side during probing.
void observer_field(const LiftedMatrices& mats, const Vec& Yhat,
                    const Vec& y_true, Vec& dYhat);

enum class ObserverMode { probing, non_probing };

/**
 * One estimator step: an RK4 step of the injection dynamics driven by the
 * measurement sample in probing mode, a bitwise hold otherwise. Divergence
 * (non-finite state) throws; it usually means the step is too large for
 * the chosen theta.
 */
Vec observer_step(const ObserverRunState& run, const LiftedMatrices& mats,
                  const Vec& y_true, ObserverMode mode, double h_step);

/// x_hat = Psi(Yhat, Y*). Callers pass the frozen Y*(t*) stack on hold
/// intervals. Non-finite results throw a reconstruction error.
Vec reconstruct(const Vec& Yhat, const Vec& Y_star, const ObservabilityMap& map);

/// z = Delta^{-1} e, the rescaled mismatch: block i divided by theta^i.
Vec rescale_error(const Vec& e, double theta, int q, int n_y);

/**
 * Joint probed closed-loop + estimator simulation over whole periods.
 *
 * The record grid has h_record = t_star / rows_per_probe and T a multiple
 * of h_record. Probing intervals integrate the joint system with substeps
 * bounded by 0.1/theta; hold intervals integrate the plant alone (the
 * estimator is frozen, so the stiff injection dynamics are inactive) with
 * substeps bounded by h_plant.
 *
 * At each period start the estimator re-initializes from the current
 * measurement. The trace row at t = kT carries the held pre-init estimate
 * (the value the adversary still holds at that instant); re-initialization
 * takes effect immediately after.
 */
struct ProbedRunSetup {
    ClosedLoopSystem sys;
    ProbingSchedule schedule;
    ProbeSignal probe;
    LiftedMatrices mats;
    ObservabilityMap map;
    double eps_y = 0;
    long periods = 1;
    Vec x0;
    int rows_per_probe = 32;
    double h_plant = 0.01;  // accuracy step for the non-stiff plant
    double escape_bound = 1e9;
    bool truncate_on_escape = false;
};

SimulationTrace run_probed_estimation(const ProbedRunSetup& setup);

}  // namespace probest
