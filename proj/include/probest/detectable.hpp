#pragma once

#include <complex>
#include <functional>
#include <vector>

#include "probest/common.hpp"
#include "probest/dynamics.hpp"

namespace probest {

/**
 * Output-injection observer
 *
 *   d/dt xhat = f(xhat, y) + l(y - yhat),   yhat = h(xhat_p)
 *
 * run alongside the closed loop. The injection map must satisfy l(0) = 0.
 * Nonlinear injections are supplied per scenario; only the linear case is
 * auto-designed.
 */
struct ISSObserver {
    std::function<Vec(const Vec& residual)> l;

    static ISSObserver from_gain(const Mat& L);
};

/**
 * Linear specialization dx = A x + B a, y = C x + a, where A already closes
 * the output feedback loop and B is the sensitivity of the closed-loop
 * field to the output channel. C carries the block shape [C_p 0]: the
 * output reads plant states only.
 */
struct LinearClosedLoop {
    Mat A;
    Mat B;
    Mat C;

    /// Checks square A, compatible B/C, and the zero controller block of C.
    void validate(int n_p, int n_c) const;
};

struct DetectabilityResult {
    bool detectable = false;
    /// Every eigenvalue whose mode is unobservable; detectability fails
    /// exactly when one of these has nonnegative real part.
    std::vector<std::complex<double>> unobservable_modes;
};

/**
 * Eigenvector test: an eigenvalue is unobservable when the smallest
 * singular value of the stacked pencil [A - lambda I; C] falls below
 * 1e-9 relative to |A|. Detectable iff all such modes are strictly stable.
 */
DetectabilityResult check_detectability(const Mat& A, const Mat& C,
                                        double rel_tol = 1e-9);

/**
 * Observer gain placing the eigenvalues of A - L C at the desired
 * self-conjugate locations (single-output path: characteristic-polynomial
 * formula through the observability matrix; multi-output matrices design
 * through a single observable row). Placement is rechecked to 1e-8.
 */
Mat luenberger_gain(const Mat& A, const Mat& C,
                    const std::vector<std::complex<double>>& desired_poles);

/**
 * Observer realizing d/dt xhat = A xhat + L (y - yhat) through the generic
 * injection form. The generic form evaluates f(xhat, y), which already
 * feeds the measured output through the model sensitivity B; the injection
 * is compensated by B so the error dynamics come out as A - L C exactly.
 */
ISSObserver luenberger_observer(const LinearClosedLoop& lin, const Mat& L);

/// Default pole rule: shift every closed-loop pole left by three times the
/// real part of the slowest stable mode.
std::vector<std::complex<double>> default_observer_poles(const Mat& A);

struct PassiveRunOptions {
    double escape_bound = 1e9;
    int record_stride = 1;
};

/**
 * Co-integrates the closed loop and the observer on a silent channel.
 * The plant/controller columns of the returned trace are computed by the
 * same arithmetic as a run without the observer attached, so the two are
 * bit-identical; the observer feeds back nothing.
 */
SimulationTrace run_passive_estimation(const ClosedLoopSystem& sys,
                                       const ISSObserver& obs, const Vec& x0,
                                       const Vec& xhat0, double horizon,
                                       double h_step,
                                       const PassiveRunOptions& opts = {});

}  // namespace probest
