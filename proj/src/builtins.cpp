#include <cmath>

#include "probest/scenario.hpp"

namespace probest {

namespace {

Vec vec1(double a) {
    Vec v(1);
    v[0] = a;
    return v;
}

Vec vec2(double a, double b) {
    Vec v(2);
    v[0] = a;
    v[1] = b;
    return v;
}

/// Quadratic-form modulus on the annulus: |V(x)-V(w)| <= a r + b r^2 with
/// a = 2 lam_max sqrt(2 (R+R_m)/lam_min) and b = n lam_max, for V = x^T P x
/// in the infinity norm on a 2-state loop.
KFunction quadratic_modulus(double lam_min, double lam_max, double level) {
    const double a = 2.0 * lam_max * std::sqrt(2.0 * level / lam_min);
    const double b = 2.0 * lam_max;
    return KFunction::affine_quadratic(a, b);
}

// ---------------------------------------------------------------------------
// (A) linear_detectable: integrator plant under a dynamic output feedback,
// closed loop A = [[-1,-1],[1,0]]. Observable, so the passive path applies.
// ---------------------------------------------------------------------------
BuiltinSystem make_linear_detectable() {
    BuiltinSystem b;
    b.name = "linear_detectable";

    PlantModel plant;
    plant.n_p = 1;
    plant.n_u = 1;
    plant.n_y = 1;
    plant.f_p = [](const Vec&, const Vec& u) { return u; };
    plant.h = [](const Vec& xp) { return xp; };
    plant.lie_h = [](const Vec& x, const Vec& stack, int i) -> Vec {
        const double p0 = stack[0];
        const double p1 = stack.size() > 1 ? stack[1] : 0.0;
        switch (i) {
            case 0: return vec1(x[0]);
            case 1: return vec1(-p0 - x[1]);
            case 2: return vec1(-p1 - p0);
            default:
                throw Error(ErrorKind::model, "linear_detectable: lie order > 2");
        }
    };

    ControllerModel ctrl;
    ctrl.n_c = 1;
    ctrl.f_c = [](const Vec&, const Vec& y) { return y; };
    ctrl.kappa = [](const Vec& xc, const Vec& y) { return vec1(-y[0] - xc[0]); };

    b.sys = {plant, ctrl};

    LinearClosedLoop lin;
    lin.A = Mat(2, 2);
    lin.A << -1.0, -1.0, 1.0, 0.0;
    lin.B = Mat(2, 1);
    lin.B << -1.0, 1.0;
    lin.C = Mat(1, 2);
    lin.C << 1.0, 0.0;
    b.linear = lin;

    b.probe = [](double amp, int q) {
        return make_constant_probe(vec1(amp), q + 1);
    };
    b.map = [](double) {
        ObservabilityMap m;
        m.q = 1;
        m.psi = [](const Vec& Y, const Vec& Ystar) {
            return vec2(Y[0], -Ystar[0] - Y[1]);
        };
        m.rho_psi = KFunction::linear(1.0);
        return m;
    };
    b.certificate = [](double delta_x, double R_m) {
        // P solves P A + A^T P = -I for the closed loop above
        Mat P(2, 2);
        P << 1.0, 0.5, 0.5, 1.5;
        const double lam_min = 0.5 * (2.5 - std::sqrt(1.25));
        const double lam_max = 0.5 * (2.5 + std::sqrt(1.25));
        LyapunovCertificate cert;
        cert.V = [P](const Vec& x) { return x.dot(P * x); };
        cert.gradV = [P](const Vec& x) -> Vec { return 2.0 * (P * x); };
        cert.alpha1 = KFunction([lam_min](double r) { return lam_min * r * r; },
                                [lam_min](double v) { return std::sqrt(v / lam_min); });
        cert.alpha2 = KFunction([lam_max](double r) { return 2.0 * lam_max * r * r; },
                                [lam_max](double v) { return std::sqrt(v / (2.0 * lam_max)); });
        cert.alpha3 = KFunction::linear(1.0 / lam_max);
        cert.R = lam_min * delta_x * delta_x;
        cert.R_m = R_m;
        cert.rho = quadratic_modulus(lam_min, lam_max, cert.R + cert.R_m);
        return cert;
    };
    b.default_probe_amplitude = 1.0;
    b.default_fit_horizon = 20.0;
    b.default_x0 = vec2(0.5, -0.3);
    return b;
}

// ---------------------------------------------------------------------------
// (B) loss_of_excitation: the controller state is invisible to passive
// listening whenever the plant output vanishes, and otherwise leaks only at
// the slow rate eps_c. A constant probe restores observability of x_c.
// ---------------------------------------------------------------------------
constexpr double kEpsC = 0.01;

BuiltinSystem make_loss_of_excitation() {
    BuiltinSystem b;
    b.name = "loss_of_excitation";

    PlantModel plant;
    plant.n_p = 1;
    plant.n_u = 1;
    plant.n_y = 1;
    plant.f_p = [](const Vec& xp, const Vec& u) { return vec1(-xp[0] + u[0]); };
    plant.h = [](const Vec& xp) { return xp; };
    plant.lie_h = [](const Vec& x, const Vec& stack, int i) -> Vec {
        const double p0 = stack[0];
        const double p1 = stack.size() > 1 ? stack[1] : 0.0;
        const double xp = x[0], xc = x[1];
        switch (i) {
            case 0: return vec1(xp);
            case 1: return vec1(-xp + (xc - 1.0) * p0);
            case 2:
                return vec1(xp - (xc - 1.0) * p0 - kEpsC * xc * p0 +
                            (xc - 1.0) * p1);
            default:
                throw Error(ErrorKind::model, "loss_of_excitation: lie order > 2");
        }
    };

    ControllerModel ctrl;
    ctrl.n_c = 1;
    ctrl.f_c = [](const Vec& xc, const Vec&) { return vec1(-kEpsC * xc[0]); };
    ctrl.kappa = [](const Vec& xc, const Vec& y) {
        return vec1((xc[0] - 1.0) * y[0]);
    };

    b.sys = {plant, ctrl};

    b.probe = [](double amp, int q) {
        return make_constant_probe(vec1(amp), q + 1);
    };
    b.map = [](double amp) {
        ObservabilityMap m;
        m.q = 1;
        m.psi = [](const Vec& Y, const Vec& Ystar) {
            return vec2(Y[0], (Y[1] + Y[0] + Ystar[0]) / Ystar[0]);
        };
        const double slope = std::max(1.0, 2.0 / std::abs(amp));
        m.rho_psi = KFunction::linear(slope);
        return m;
    };
    b.certificate = [](double delta_x, double R_m) {
        LyapunovCertificate cert;
        cert.V = [](const Vec& x) { return x.squaredNorm(); };
        cert.gradV = [](const Vec& x) -> Vec { return 2.0 * x; };
        cert.alpha1 = KFunction([](double r) { return r * r; },
                                [](double v) { return std::sqrt(v); });
        cert.alpha2 = KFunction([](double r) { return 2.0 * r * r; },
                                [](double v) { return std::sqrt(v / 2.0); });
        cert.alpha3 = KFunction::linear(2.0 * kEpsC);
        cert.R = delta_x * delta_x;
        cert.R_m = R_m;
        cert.rho = quadratic_modulus(1.0, 1.0, cert.R + cert.R_m);
        // the decrease certificate needs (2 - x_c) bounded away from zero
        cert.domain = [](const Vec& x) { return x[1] <= 1.5; };
        return cert;
    };
    b.default_probe_amplitude = 1.0;
    b.default_fit_horizon = 400.0;
    b.default_x0 = vec2(0.2, 0.2);
    return b;
}

// ---------------------------------------------------------------------------
// (C) cubic_damped: nonlinear controller damping, V = x_p^2 + x_c^2 with
// dV/dt = -2 x_p^2 - 2 x_c^4. Stress case for the certificate machinery.
// ---------------------------------------------------------------------------
BuiltinSystem make_cubic_damped() {
    BuiltinSystem b;
    b.name = "cubic_damped";

    PlantModel plant;
    plant.n_p = 1;
    plant.n_u = 1;
    plant.n_y = 1;
    plant.f_p = [](const Vec& xp, const Vec& u) { return vec1(-xp[0] + u[0]); };
    plant.h = [](const Vec& xp) { return xp; };
    plant.lie_h = [](const Vec& x, const Vec& stack, int i) -> Vec {
        const double p0 = stack[0];
        const double xp = x[0], xc = x[1];
        switch (i) {
            case 0: return vec1(xp);
            case 1: return vec1(-xp - xc);
            case 2: return vec1(xp + xc + xc * xc * xc - p0);
            default:
                throw Error(ErrorKind::model, "cubic_damped: lie order > 2");
        }
    };

    ControllerModel ctrl;
    ctrl.n_c = 1;
    ctrl.f_c = [](const Vec& xc, const Vec& y) {
        return vec1(-xc[0] * xc[0] * xc[0] + y[0]);
    };
    ctrl.kappa = [](const Vec& xc, const Vec&) { return vec1(-xc[0]); };

    b.sys = {plant, ctrl};

    b.probe = [](double amp, int q) {
        return make_constant_probe(vec1(amp), q + 1);
    };
    b.map = [](double) {
        ObservabilityMap m;
        m.q = 1;
        m.psi = [](const Vec& Y, const Vec&) { return vec2(Y[0], -Y[0] - Y[1]); };
        m.rho_psi = KFunction::linear(2.0);
        return m;
    };
    b.certificate = [](double delta_x, double R_m) {
        LyapunovCertificate cert;
        cert.V = [](const Vec& x) { return x.squaredNorm(); };
        cert.gradV = [](const Vec& x) -> Vec { return 2.0 * x; };
        cert.alpha1 = KFunction([](double r) { return r * r; },
                                [](double v) { return std::sqrt(v); });
        cert.alpha2 = KFunction([](double r) { return 2.0 * r * r; },
                                [](double v) { return std::sqrt(v / 2.0); });
        // on the unit sublevel set the worst decrease sits on the pure
        // controller axis, where dV/dt = -2 V^2
        cert.alpha3 = KFunction(
            [](double v) { return v <= 1.0 ? 2.0 * v * v : 2.0 * v; },
            [](double w) { return w <= 2.0 ? std::sqrt(w / 2.0) : w / 2.0; });
        cert.R = delta_x * delta_x;
        cert.R_m = R_m;
        cert.rho = quadratic_modulus(1.0, 1.0, cert.R + cert.R_m);
        return cert;
    };
    b.default_probe_amplitude = 0.3;
    b.default_fit_horizon = 40.0;
    b.default_x0 = vec2(0.15, 0.15);
    return b;
}

}  // namespace

const std::map<std::string, BuiltinSystem>& builtin_systems() {
    static const std::map<std::string, BuiltinSystem> registry = [] {
        std::map<std::string, BuiltinSystem> r;
        BuiltinSystem a = make_linear_detectable();
        BuiltinSystem b = make_loss_of_excitation();
        BuiltinSystem c = make_cubic_damped();
        r.emplace(a.name, std::move(a));
        r.emplace(b.name, std::move(b));
        r.emplace(c.name, std::move(c));
        return r;
    }();
    return registry;
}

}  // namespace probest
