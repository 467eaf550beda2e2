#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "probest/common.hpp"
#include "probest/dynamics.hpp"
#include "probest/highgain.hpp"
#include "probest/kfun.hpp"
#include "probest/probing.hpp"

namespace probest {

/**
 * Closed-loop Lyapunov certificate: V with its comparison functions and
 * the modulus rho used by the stealth budget. R is the working level set
 * alpha1(Delta_x); R_m the annulus margin. Certificates for the built-in
 * systems are derived analytically per scenario.
 */
struct LyapunovCertificate {
    std::function<double(const Vec&)> V;
    std::function<Vec(const Vec&)> gradV;
    KFunction alpha1, alpha2, alpha3;
    KFunction rho;
    double R = 0;
    double R_m = 0;
    /// Optional restriction of the certified region (some certificates are
    /// only valid on part of the state space).
    std::function<bool(const Vec&)> domain;

    bool in_domain(const Vec& x) const { return !domain || domain(x); }
};

/**
 * Sampled bound constants. The public fields carry the inflated values
 * used by the selection rules (1.2x for Lipschitz constants and suprema,
 * 1.5x for phi_bar); raw holds the uninflated sampled maxima.
 */
struct BoundConstants {
    double F = 0;       // sup |f(x, h(x_p))| over the extended level set
    double F_star = 0;  // sup |f(x, y*)| over the extended level set
    double l_x = 0, l_y = 0, l_h = 0;
    double L_bar = 0;  // l_x + l_y * l_h
    double phi_bar = 0;   // bound on the (q+1)-th output derivative
    double sup_lift = 0;  // bound on the derivative blocks 1..q
    struct Raw {
        double F = 0, F_star = 0, l_x = 0, l_y = 0, l_h = 0, phi_bar = 0,
               sup_lift = 0;
    } raw;
};

struct BoundEstimationParams {
    int sample_count = 4096;
    std::uint64_t seed = 1;
    int q = 1;
    double t_star = 0;
    int trajectory_count = 10;  // probed trajectories for the derivative sups
    double fd_eps = 1e-5;       // finite-difference half width
};

/// Rejection-samples the extended sublevel set and probed trajectories to
/// produce every constant the selection rules need.
BoundConstants estimate_bound_constants(const ClosedLoopSystem& sys,
                                        const LyapunovCertificate& cert,
                                        const ProbeSignal& probe,
                                        const BoundEstimationParams& params);

/// One scalar decay record: value series on a shared time grid plus the
/// initial size the envelope normalizes by.
struct ScalarSeries {
    std::vector<double> t;
    std::vector<double> v;
    double r0 = 0;
};

/**
 * Fits beta(r, s) = c1 r exp(-c2 s) over the pointwise max of the
 * normalized ensemble: log-space least squares, c1 inflated 1.2x, then
 * raised further until the curve dominates every sample. A non-decaying
 * ensemble is a stability violation; an all-zero ensemble returns the
 * degenerate sentinel.
 */
ExpEnvelope fit_kl_envelope(const std::vector<ScalarSeries>& ensemble);

struct GronwallReport {
    double d_bar = 0;       // max over t of |integral of d up to t|
    double deviation_bound = 0;  // d_bar * exp(L_bar * T)
    double max_deviation = 0;    // max |x - w| observed
    double sigma = 0;            // rho(deviation_bound)
    int deviation_violations = 0;
    int lyapunov_violations = 0;
    bool pass = false;
};

/**
 * Simulates the nominal loop w and the perturbed loop x from the same
 * initial state and checks the disturbance amplification chain:
 * |x - w|(t) <= d_bar e^{L_bar T} and V(x(t)) <= beta_V(V(x0), t) + sigma
 * with sigma = rho(d_bar e^{L_bar T}).
 */
GronwallReport gronwall_check(const ClosedLoopSystem& sys,
                              const LyapunovCertificate& cert,
                              const std::function<Vec(double)>& d, double T,
                              const Vec& x0, double L_bar,
                              const ExpEnvelope& beta_V_fit, double h_step);

struct StealthVerdict {
    double K_x = 0;
    double max_x = 0;
    int level_violations = 0;  // periods with V(x(kT + t*)) > R
    bool escaped = false;
    double escape_time = 0;
    bool pass = false;
};

/// Stealth bound K_x = alpha1^{-1}(beta_V(alpha1(Dx), 0) + alpha1(Dx));
/// passes iff the whole trace stays below it and every end-of-probe sample
/// sits inside the working level set.
StealthVerdict verify_stealth(const SimulationTrace& trace,
                              const LyapunovCertificate& cert, double delta_x,
                              const ExpEnvelope& beta_V_fit,
                              const ProbingSchedule& schedule);

struct PeriodRecord {
    long k = 0;
    double err_end_probe = 0, bound_end_probe = 0;
    double err_in_interval = 0, bound_in_interval = 0;
    double err_end_period = 0, bound_end_period = 0;
    double V_end_probe = 0;
    bool pass = false;
};

struct EstimationVerdict {
    std::vector<PeriodRecord> periods;
    bool pass = false;
};

struct EstimationBoundParams {
    double K_xtilde = 0;
    double delta_x = 0;
    double eps_xtilde = 0;
    double delta_e = 0;  // admissible-set diameter
    double theta = 1;
    int q = 1;
    double c = 1;  // sqrt(lambda_max/lambda_min) of the certificate P
    KFunction rho_psi;
    ExpEnvelope beta_x_fit;  // sigma_bar(r) = beta_x(r, 0)
};

/**
 * Per-period check of the three estimation inequality families:
 * end-of-probe error below K; every in-period sample below the larger of
 * the probing-transient bound rho_psi(c delta_e theta^{q-1}) and the hold
 * bound K + Dx + sigma_bar(Dx); end-of-period error below K + Dx + eps.
 */
EstimationVerdict verify_estimation(const SimulationTrace& trace,
                                    const ProbingSchedule& schedule,
                                    const EstimationBoundParams& params);

struct LyapunovDiagnostics {
    std::vector<double> V;
    /// Row indices where V increased across a hold-interval step by more
    /// than the integration tolerance.
    std::vector<std::size_t> increase_flags;
    double max_increase = 0;
};

LyapunovDiagnostics lyapunov_along_trace(const LyapunovCertificate& cert,
                                         const SimulationTrace& trace,
                                         double tol_per_step = 1e-7);

}  // namespace probest
