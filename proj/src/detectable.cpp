#include "probest/detectable.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace probest {

ISSObserver ISSObserver::from_gain(const Mat& L) {
    ISSObserver obs;
    obs.l = [L](const Vec& residual) -> Vec { return L * residual; };
    return obs;
}

ISSObserver luenberger_observer(const LinearClosedLoop& lin, const Mat& L) {
    return ISSObserver::from_gain(L - lin.B);
}

void LinearClosedLoop::validate(int n_p, int n_c) const {
    const Eigen::Index n = n_p + n_c;
    if (A.rows() != n || A.cols() != n)
        throw Error(ErrorKind::config, "linear system: A has wrong shape");
    if (B.rows() != n)
        throw Error(ErrorKind::config, "linear system: B has wrong shape");
    if (C.cols() != n)
        throw Error(ErrorKind::config, "linear system: C has wrong shape");
    if (n_c > 0 && C.rightCols(n_c).cwiseAbs().maxCoeff() != 0.0)
        throw Error(ErrorKind::config,
                    "linear system: C must carry a zero controller block");
}

DetectabilityResult check_detectability(const Mat& A, const Mat& C,
                                        double rel_tol) {
    if (A.rows() != A.cols())
        throw Error(ErrorKind::design, "check_detectability: A must be square");
    if (C.cols() != A.cols())
        throw Error(ErrorKind::design, "check_detectability: C is incompatible");
    const Eigen::Index n = A.rows();
    Eigen::EigenSolver<Mat> es(A);
    if (es.info() != Eigen::Success)
        throw Error(ErrorKind::numerical, "check_detectability: eigensolver failed");
    const double scale = std::max(1.0, inf_norm(A));

    DetectabilityResult out;
    out.detectable = true;
    Eigen::MatrixXcd pencil(n + C.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::complex<double> lambda = es.eigenvalues()[i];
        pencil.topRows(n) = A.cast<std::complex<double>>();
        pencil.topRows(n).diagonal().array() -= lambda;
        pencil.bottomRows(C.rows()) = C.cast<std::complex<double>>();
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(pencil);
        const double smin = svd.singularValues().minCoeff();
        if (smin < rel_tol * scale) {
            out.unobservable_modes.push_back(lambda);
            if (lambda.real() >= 0.0) out.detectable = false;
        }
    }
    return out;
}

namespace {

/// Real coefficients of prod (s - p_i), ascending from the constant term
/// excluded: returns (c_{n-1}, ..., c_0) for s^n + c_{n-1} s^{n-1} + ... + c_0.
std::vector<double> real_char_poly(const std::vector<std::complex<double>>& poles) {
    std::vector<std::complex<double>> c{1.0};
    for (const auto& p : poles) {
        std::vector<std::complex<double>> next(c.size() + 1, 0.0);
        for (std::size_t i = 0; i < c.size(); ++i) {
            next[i] += c[i];
            next[i + 1] -= c[i] * p;
        }
        c = std::move(next);
    }
    std::vector<double> out;
    for (std::size_t i = 1; i < c.size(); ++i) {
        if (std::abs(c[i].imag()) > 1e-9 * (1.0 + std::abs(c[i].real())))
            throw Error(ErrorKind::design,
                        "luenberger_gain: desired poles are not self-conjugate");
        out.push_back(c[i].real());
    }
    return out;  // coefficients of s^{n-1}, ..., s^0
}

Mat observability_matrix(const Mat& A, const Eigen::RowVectorXd& c) {
    const Eigen::Index n = A.rows();
    Mat O(n, n);
    Eigen::RowVectorXd row = c;
    for (Eigen::Index i = 0; i < n; ++i) {
        O.row(i) = row;
        row = row * A;
    }
    return O;
}

Mat single_output_gain(const Mat& A, const Eigen::RowVectorXd& c,
                       const std::vector<std::complex<double>>& poles) {
    const Eigen::Index n = A.rows();
    Mat O = observability_matrix(A, c);
    Eigen::FullPivLU<Mat> lu(O);
    lu.setThreshold(1e-9);
    if (lu.rank() < n)
        throw Error(ErrorKind::design,
                    "luenberger_gain: pair is not observable from this output");
    // characteristic-polynomial placement: L = p(A) O^{-1} e_n with
    // p(A) = A^n + c_{n-1} A^{n-1} + ... + c_0 I
    std::vector<double> coeffs = real_char_poly(poles);
    std::vector<Mat> powers;
    Mat power = Mat::Identity(n, n);
    for (Eigen::Index i = 0; i <= n; ++i) {
        powers.push_back(power);
        power = power * A;
    }
    Mat pofA = powers[n];
    for (Eigen::Index i = 0; i < n; ++i)
        pofA += coeffs[n - 1 - i] * powers[i];

    Vec e_n = Vec::Zero(n);
    e_n[n - 1] = 1.0;
    return pofA * lu.solve(Mat::Identity(n, n)) * e_n;
}

}  // namespace

std::vector<std::complex<double>> default_observer_poles(const Mat& A) {
    Eigen::EigenSolver<Mat> es(A);
    double slowest = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        const double re = es.eigenvalues()[i].real();
        if (re < 0.0) slowest = std::min(slowest, -re);
    }
    if (!std::isfinite(slowest))
        throw Error(ErrorKind::design,
                    "default_observer_poles: system has no stable mode");
    std::vector<std::complex<double>> poles;
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        poles.push_back(es.eigenvalues()[i] - 3.0 * slowest);
    return poles;
}

Mat luenberger_gain(const Mat& A, const Mat& C,
                    const std::vector<std::complex<double>>& desired_poles) {
    const Eigen::Index n = A.rows();
    if (A.cols() != n || C.cols() != n)
        throw Error(ErrorKind::design, "luenberger_gain: dimension mismatch");
    if (static_cast<Eigen::Index>(desired_poles.size()) != n)
        throw Error(ErrorKind::design, "luenberger_gain: need one pole per state");
    for (const auto& p : desired_poles)
        if (p.real() >= 0.0)
            throw Error(ErrorKind::design,
                        "luenberger_gain: desired poles must be stable");

    Mat L = Mat::Zero(n, C.rows());
    bool placed = false;
    std::string last_err = "luenberger_gain: no observable output row";
    for (Eigen::Index r = 0; r < C.rows() && !placed; ++r) {
        try {
            L.col(r) = single_output_gain(A, C.row(r), desired_poles);
            placed = true;
        } catch (const Error& e) {
            last_err = e.what();
        }
    }
    if (!placed) throw Error(ErrorKind::design, last_err);

    Eigen::EigenSolver<Mat> check(A - L * C);
    std::vector<std::complex<double>> got(check.eigenvalues().data(),
                                          check.eigenvalues().data() + n);
    std::vector<std::complex<double>> want = desired_poles;
    auto by_parts = [](const std::complex<double>& a, const std::complex<double>& b) {
        if (a.real() != b.real()) return a.real() < b.real();
        return a.imag() < b.imag();
    };
    std::sort(got.begin(), got.end(), by_parts);
    std::sort(want.begin(), want.end(), by_parts);
    for (Eigen::Index i = 0; i < n; ++i)
        if (std::abs(got[i] - want[i]) > 1e-8 * std::max(1.0, std::abs(want[i])))
            throw Error(ErrorKind::design,
                        "luenberger_gain: placement verification failed");
    return L;
}

SimulationTrace run_passive_estimation(const ClosedLoopSystem& sys,
                                       const ISSObserver& obs, const Vec& x0,
                                       const Vec& xhat0, double horizon,
                                       double h_step,
                                       const PassiveRunOptions& opts) {
    const int n = sys.dim();
    if (x0.size() != n || xhat0.size() != n)
        throw Error(ErrorKind::config, "passive run: state dimension mismatch");
    if (!obs.l)
        throw Error(ErrorKind::config, "passive run: observer has no injection map");
    if (inf_norm(obs.l(Vec::Zero(sys.plant.n_y))) != 0.0)
        throw Error(ErrorKind::design, "passive run: injection map must vanish at zero");

    // Joint field over (x, xhat). The x block is computed by exactly the
    // closed-loop arithmetic of a standalone run; the observer reads y but
    // never writes back.
    Field joint = [&sys, &obs, n](double, const Vec& xs, Vec& dxs) {
        Vec x = xs.head(n);
        Vec xhat = xs.tail(n);
        Vec y = sys.plant.h(x.head(sys.plant.n_p));
        Vec dx(n), dxh(n);
        closed_loop_field(sys, x, y, dx);
        Vec yhat = sys.plant.h(xhat.head(sys.plant.n_p));
        closed_loop_field(sys, xhat, y, dxh);
        dxs.head(n) = dx;
        dxs.tail(n) = dxh + obs.l(y - yhat);
    };

    Vec joint0(2 * n);
    joint0.head(n) = x0;
    joint0.tail(n) = xhat0;
    IntegrateOptions iopts;
    iopts.escape_bound = opts.escape_bound;
    iopts.record_stride = opts.record_stride;
    SimulationTrace raw = integrate(joint, joint0, 0.0, horizon, h_step, iopts);

    SimulationTrace trace;
    trace.t0 = raw.t0;
    trace.h_step = raw.h_step;
    trace.escape_time = raw.escape_time;
    trace.t = raw.t;
    const int n_y = sys.plant.n_y;
    const Vec zero_a = Vec::Zero(n_y);
    trace.x.reserve(raw.rows());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        Vec x = raw.x[i].head(n);
        trace.x.push_back(x);
        trace.y.push_back(sys.plant.h(x.head(sys.plant.n_p)));
        trace.a.push_back(zero_a);
        trace.mode.push_back(0);
        trace.xhat.push_back(raw.x[i].tail(n));
    }
    return trace;
}

}  // namespace probest
