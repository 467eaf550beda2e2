#include "probest/highgain.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace probest {

namespace {

/// Roots of s^{q+1} + a_1 s^q + ... + a_{q+1} via the companion matrix.
bool coeffs_are_hurwitz(const Vec& coeffs) {
    const Eigen::Index n = coeffs.size();
    Mat companion = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i + 1 < n; ++i) companion(i + 1, i) = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) companion(0, i) = -coeffs[i];
    Eigen::EigenSolver<Mat> es(companion);
    for (Eigen::Index i = 0; i < n; ++i)
        if (es.eigenvalues()[i].real() >= -1e-12) return false;
    return true;
}

}  // namespace

Vec hurwitz_coefficients(int q) {
    if (q < 1) throw Error(ErrorKind::design, "hurwitz_coefficients: q must be >= 1");
    // binomial row of (s+1)^{q+1}
    Vec a(q + 1);
    double binom = 1.0;
    for (int i = 1; i <= q + 1; ++i) {
        binom = binom * (q + 2 - i) / i;
        a[i - 1] = binom;
    }
    return a;
}

LiftedMatrices build_matrices(int q, int n_y, const Vec& coeffs, double theta) {
    if (q < 1 || n_y < 1)
        throw Error(ErrorKind::design, "build_matrices: q and n_y must be >= 1");
    if (coeffs.size() != q + 1)
        throw Error(ErrorKind::design, "build_matrices: need q+1 coefficients");
    if (theta < 1.0)
        throw Error(ErrorKind::design, "build_matrices: theta must be >= 1");
    if (!coeffs_are_hurwitz(coeffs))
        throw Error(ErrorKind::design,
                    "build_matrices: coefficient polynomial is not Hurwitz");

    LiftedMatrices m;
    m.q = q;
    m.n_y = n_y;
    m.theta = theta;
    m.coeffs = coeffs;
    const int n = (q + 1) * n_y;

    m.A_hat = Mat::Zero(n, n);
    m.A_hat.topRightCorner(q * n_y, q * n_y).setIdentity();

    m.C_hat = Mat::Zero(n_y, n);
    m.C_hat.leftCols(n_y).setIdentity();

    m.H_hat = Mat::Zero(n, n_y);
    for (int i = 0; i <= q; ++i)
        m.H_hat.block(i * n_y, 0, n_y, n_y) =
            coeffs[i] * Mat::Identity(n_y, n_y);

    m.Delta = Mat::Zero(n, n);
    m.Delta_inv = Mat::Zero(n, n);
    double pow_theta = 1.0;
    for (int i = 0; i <= q; ++i) {
        for (int j = 0; j < n_y; ++j) {
            m.Delta(i * n_y + j, i * n_y + j) = pow_theta;
            m.Delta_inv(i * n_y + j, i * n_y + j) = 1.0 / pow_theta;
        }
        pow_theta *= theta;
    }
    m.gain = theta * m.Delta * m.H_hat;
    return m;
}

Mat solve_lyapunov(const Mat& M, double nu) {
    if (M.rows() != M.cols())
        throw Error(ErrorKind::design, "solve_lyapunov: M must be square");
    if (!(nu > 0.0)) throw Error(ErrorKind::design, "solve_lyapunov: nu must be positive");
    const Eigen::Index n = M.rows();
    {
        Eigen::EigenSolver<Mat> es(M);
        for (Eigen::Index i = 0; i < n; ++i)
            if (es.eigenvalues()[i].real() >= 0.0)
                throw Error(ErrorKind::design, "solve_lyapunov: M is not Hurwitz");
    }
    // vec(P M) + vec(M^T P) = (M^T (x) I + I (x) M^T) vec(P)
    Mat I = Mat::Identity(n, n);
    Mat K = Mat::Zero(n * n, n * n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index k = 0; k < n; ++k)
                for (Eigen::Index l = 0; l < n; ++l) {
                    // kron(M^T, I)(i*n+k, j*n+l) = M^T(i,j) * I(k,l)
                    double v = M(j, i) * I(k, l) + I(i, j) * M(l, k);
                    K(i * n + k, j * n + l) += v;
                }
    Vec rhs = Vec::Zero(n * n);
    for (Eigen::Index i = 0; i < n; ++i) rhs[i * n + i] = -nu;
    Vec p = K.fullPivLu().solve(rhs);
    Mat P(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k) P(k, i) = p[i * n + k];
    P = 0.5 * (P + P.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Mat> res(P * M + M.transpose() * P);
    if (res.eigenvalues().maxCoeff() > -nu + 1e-8)
        throw Error(ErrorKind::numerical, "solve_lyapunov: residual check failed");
    Eigen::SelfAdjointEigenSolver<Mat> pe(P);
    if (pe.eigenvalues().minCoeff() <= 0.0)
        throw Error(ErrorKind::numerical, "solve_lyapunov: P is not positive definite");
    return P;
}

ThetaSelection select_theta(const ThetaSelectionInputs& in) {
    if (!(in.t_star > 0.0) || !(in.delta_e0 > 0.0) || !(in.K_xtilde > 0.0) ||
        !(in.nu > 0.0) || !(in.phi_bar > 0.0) || in.q < 1)
        throw Error(ErrorKind::design, "select_theta: inputs must be positive");

    Eigen::SelfAdjointEigenSolver<Mat> pe(in.P);
    const double lam_min = pe.eigenvalues().minCoeff();
    const double lam_max = pe.eigenvalues().maxCoeff();
    if (lam_min <= 0.0)
        throw Error(ErrorKind::design, "select_theta: P must be positive definite");
    const double c = std::sqrt(lam_max / lam_min);
    const double rho_inv_K = in.rho_psi.inverse(in.K_xtilde);

    auto convergence = [&](double th, double& lhs, double& rhs) {
        lhs = std::exp(-th * in.nu * in.t_star / (4.0 * lam_min)) * in.delta_e0;
        rhs = 4.0 * lam_max * in.phi_bar / (std::pow(th, in.q - 1) * in.nu);
        return lhs <= rhs;
    };
    auto accuracy = [&](double th, double& lhs, double& rhs) {
        lhs = c * 4.0 * lam_max * in.phi_bar / (th * in.nu);
        rhs = rho_inv_K;
        return lhs <= rhs;
    };

    double last_theta = 1.0;
    for (int j = 0; j <= 60; ++j) {
        const double th = std::ldexp(1.0, j);
        if (th > in.theta_cap) break;
        last_theta = th;
        ThetaSelection sel;
        sel.grid_exponent = j;
        sel.theta = th;
        sel.theta_cap = in.theta_cap;
        const bool ok_conv = convergence(th, sel.convergence_lhs, sel.convergence_rhs);
        const bool ok_acc = accuracy(th, sel.accuracy_lhs, sel.accuracy_rhs);
        if (ok_conv && ok_acc) {
            const double half = th / 2.0;
            convergence(half, sel.convergence_lhs_half, sel.convergence_rhs_half);
            accuracy(half, sel.accuracy_lhs_half, sel.accuracy_rhs_half);
            return sel;
        }
    }
    double l, r;
    const bool conv_fails = !convergence(last_theta, l, r);
    const bool acc_fails = !accuracy(last_theta, l, r);
    std::string binding = acc_fails ? "residual_accuracy" : "probe_convergence";
    if (conv_fails && acc_fails) binding = "both";
    throw Error(ErrorKind::infeasible,
                "select_theta: no admissible theta <= " +
                    std::to_string(in.theta_cap) + "; binding inequality: " +
                    binding +
                    " (probe too short or error target too tight)");
}

Vec initialize_observer(const Vec& y_meas, int q, double eps_y) {
    if (!(eps_y > 0.0))
        throw Error(ErrorKind::design, "initialize_observer: eps_y must be positive");
    Vec Yhat = Vec::Zero((q + 1) * y_meas.size());
    Yhat.head(y_meas.size()) = y_meas;
    return Yhat;
}

void observer_field(const LiftedMatrices& mats, const Vec& Yhat,
                    const Vec& y_true, Vec& dYhat) {
    dYhat.noalias() = mats.A_hat * Yhat;
    dYhat.noalias() += mats.gain * (y_true - Yhat.head(mats.n_y));
}

Vec observer_step(const ObserverRunState& run, const LiftedMatrices& mats,
                  const Vec& y_true, ObserverMode mode, double h_step) {
    if (mode == ObserverMode::non_probing) return run.Yhat;  // exact hold
    Vec k1(run.Yhat.size()), k2(run.Yhat.size()), k3(run.Yhat.size()),
        k4(run.Yhat.size());
    observer_field(mats, run.Yhat, y_true, k1);
    observer_field(mats, run.Yhat + (0.5 * h_step) * k1, y_true, k2);
    observer_field(mats, run.Yhat + (0.5 * h_step) * k2, y_true, k3);
    observer_field(mats, run.Yhat + h_step * k3, y_true, k4);
    Vec out = run.Yhat + (h_step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!out.allFinite())
        throw Error(ErrorKind::numerical,
                    "observer_step: estimator diverged (h_step too large for theta?)");
    return out;
}

Vec reconstruct(const Vec& Yhat, const Vec& Y_star, const ObservabilityMap& map) {
    Vec x = map.psi(Yhat, Y_star);
    if (!x.allFinite())
        throw Error(ErrorKind::reconstruction,
                    "reconstruct: observability map evaluated non-finite");
    return x;
}

Vec rescale_error(const Vec& e, double theta, int q, int n_y) {
    if (theta < 1.0) throw Error(ErrorKind::design, "rescale_error: theta must be >= 1");
    Vec z(e.size());
    double pow_theta = 1.0;
    for (int i = 0; i <= q; ++i) {
        z.segment(i * n_y, n_y) = e.segment(i * n_y, n_y) / pow_theta;
        pow_theta *= theta;
    }
    return z;
}

SimulationTrace run_probed_estimation(const ProbedRunSetup& setup) {
    const ClosedLoopSystem& sys = setup.sys;
    const int n_x = sys.dim();
    const int n_y = sys.plant.n_y;
    const int n_Y = setup.mats.dim();
    const int q = setup.mats.q;
    const double t_star = setup.schedule.t_star;
    const double T = setup.schedule.T;

    if (!(t_star > 0.0))
        throw Error(ErrorKind::config, "probed run: probe duration must be positive");
    const double h_rec = t_star / setup.rows_per_probe;
    const double hold_len = T - t_star;
    const long hold_rows = std::lround(hold_len / h_rec);
    if (std::abs(hold_len - hold_rows * h_rec) > 1e-9 * std::max(1.0, T))
        throw Error(ErrorKind::config,
                    "probed run: period is not aligned with the record grid");
    const long rows_per_T = setup.rows_per_probe + hold_rows;

    // substep counts per record step, per mode
    const double h_theta = 0.1 / setup.mats.theta;
    const long sub_probe =
        std::max<long>(1, static_cast<long>(std::ceil(h_rec / std::min(h_theta, setup.h_plant) - 1e-12)));
    const long sub_hold =
        std::max<long>(1, static_cast<long>(std::ceil(h_rec / setup.h_plant - 1e-12)));

    SimulationTrace trace;
    trace.t0 = 0.0;
    trace.h_step = h_rec;
    const long n_rows = setup.periods * rows_per_T + 1;
    trace.t.reserve(n_rows);
    trace.x.reserve(n_rows);
    trace.y.reserve(n_rows);
    trace.a.reserve(n_rows);
    trace.mode.reserve(n_rows);
    trace.Yhat.reserve(n_rows);
    trace.xhat.reserve(n_rows);

    const Vec Ystar_frozen = probe_derivative_stack(setup.probe, t_star, q);

    Vec x = setup.x0;
    Vec Yhat = Vec::Zero(n_Y);
    detail::Rk4Workspace ws;
    ws.resize(n_x + n_Y);
    Vec joint(n_x + n_Y);

    // probing-mode joint field: plant driven by the probe, estimator by the
    // true measurement
    double period_base = 0.0;
    Field probing_field = [&](double t, const Vec& xy, Vec& dxy) {
        const double s = t - period_base;
        Vec y_star = setup.probe.value(s);
        Vec xp = xy.head(sys.plant.n_p);
        Vec xc = xy.segment(sys.plant.n_p, sys.controller.n_c);
        Vec u = sys.controller.kappa(xc, y_star);
        dxy.head(sys.plant.n_p) = sys.plant.f_p(xp, u);
        dxy.segment(sys.plant.n_p, sys.controller.n_c) = sys.controller.f_c(xc, y_star);
        Vec y_true = sys.plant.h(xp);
        dxy.segment(n_x, n_Y).noalias() = setup.mats.A_hat * xy.segment(n_x, n_Y);
        dxy.segment(n_x, n_Y).noalias() +=
            setup.mats.gain * (y_true - xy.segment(n_x, n_y));
    };

    detail::Rk4Workspace ws_hold;
    ws_hold.resize(n_x);
    Field hold_field = [&](double, const Vec& xs, Vec& dxs) {
        Vec y = sys.plant.h(xs.head(sys.plant.n_p));
        closed_loop_field(sys, xs, y, dxs);
    };

    auto record = [&](long row, const Vec& xhat_val) {
        const double t = row * h_rec;
        const long r = row % rows_per_T;
        const bool probing = r < setup.rows_per_probe;
        Vec h_val = sys.plant.h(x.head(sys.plant.n_p));
        Vec y_eff = probing ? setup.probe.value(r * h_rec) : h_val;
        trace.t.push_back(t);
        trace.x.push_back(x);
        trace.y.push_back(y_eff);
        trace.a.push_back(y_eff - h_val);
        trace.mode.push_back(probing ? 1 : 0);
        trace.Yhat.push_back(Yhat);
        trace.xhat.push_back(xhat_val);
    };

    for (long row = 0; row < n_rows; ++row) {
        const long r = row % rows_per_T;
        const bool at_period_start = (r == 0);
        const bool final_row = (row == n_rows - 1);

        if (at_period_start) {
            if (row == 0) {
                // no held estimate exists yet: record the fresh initialization
                Yhat = initialize_observer(sys.plant.h(x.head(sys.plant.n_p)), q,
                                            setup.eps_y);
                record(row, reconstruct(Yhat, probe_derivative_stack(setup.probe, 0.0, q),
                                        setup.map));
            } else {
                // the row at kT carries the estimate still held from the
                // previous period; re-initialization takes effect just after
                record(row, reconstruct(Yhat, Ystar_frozen, setup.map));
                if (!final_row)
                    Yhat = initialize_observer(sys.plant.h(x.head(sys.plant.n_p)),
                                                q, setup.eps_y);
            }
        } else if (r < setup.rows_per_probe) {
            record(row, reconstruct(
                            Yhat, probe_derivative_stack(setup.probe, r * h_rec, q),
                            setup.map));
        } else {
            record(row, reconstruct(Yhat, Ystar_frozen, setup.map));
        }
        if (final_row) break;

        const bool probing_step = r < setup.rows_per_probe;
        const double t_row = row * h_rec;
        if (probing_step) {
            period_base = (row / rows_per_T) * rows_per_T * h_rec;
            joint.head(n_x) = x;
            joint.tail(n_Y) = Yhat;
            const double h_sub = h_rec / sub_probe;
            for (long s = 0; s < sub_probe; ++s)
                ws.step(probing_field, t_row + s * h_sub, h_sub, joint);
            x = joint.head(n_x);
            Yhat = joint.tail(n_Y);
            if (!Yhat.allFinite())
                throw Error(ErrorKind::numerical,
                            "probed run: estimator diverged (reduce h or raise theta)");
        } else {
            const double h_sub = h_rec / sub_hold;
            for (long s = 0; s < sub_hold; ++s)
                ws_hold.step(hold_field, t_row + s * h_sub, h_sub, x);
        }
        if (!x.allFinite() || inf_norm(x) > setup.escape_bound) {
            const double t_esc = (row + 1) * h_rec;
            if (setup.truncate_on_escape) {
                trace.escape_time = t_esc;
                return trace;
            }
            throw FiniteEscapeError(t_esc,
                                    "probed run: state escaped the bound at t = " +
                                        std::to_string(t_esc));
        }
    }
    return trace;
}

}  // namespace probest
