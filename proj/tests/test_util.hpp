#pragma once

#include <unsupported/Eigen/MatrixFunctions>

#include "probest/dynamics.hpp"
#include "probest/scenario.hpp"

namespace testutil {

using probest::ClosedLoopSystem;
using probest::ControllerModel;
using probest::Mat;
using probest::PlantModel;
using probest::Vec;

inline Vec v1(double a) {
    Vec v(1);
    v[0] = a;
    return v;
}

inline Vec v2(double a, double b) {
    Vec v(2);
    v[0] = a;
    v[1] = b;
    return v;
}

/// Matrix exponential oracle, independent of any library code path.
inline Mat expm(const Mat& M) { return M.exp(); }

inline const probest::BuiltinSystem& builtin(const std::string& name) {
    return probest::builtin_systems().at(name);
}

/// Unprobed closed-loop field as an integrator callback.
inline probest::Field unprobed_field(const ClosedLoopSystem& sys) {
    return [&sys](double, const Vec& x, Vec& dx) {
        Vec y = sys.plant.h(x.head(sys.plant.n_p));
        probest::closed_loop_field(sys, x, y, dx);
    };
}

/// Scalar loop xdot = -x (plant only, trivial controller input).
inline ClosedLoopSystem scalar_contraction() {
    PlantModel plant;
    plant.n_p = 1;
    plant.n_u = 1;
    plant.n_y = 1;
    plant.f_p = [](const Vec& xp, const Vec& u) {
        Vec d(1);
        d[0] = -xp[0] + u[0];
        return d;
    };
    plant.h = [](const Vec& xp) { return xp; };
    plant.lie_h = [](const Vec& x, const Vec&, int i) {
        Vec out(1);
        out[0] = i == 0 ? x[0] : 0.0;
        return out;
    };
    ControllerModel ctrl;
    ctrl.n_c = 1;
    ctrl.f_c = [](const Vec& xc, const Vec&) {
        Vec d(1);
        d[0] = -xc[0];
        return d;
    };
    ctrl.kappa = [](const Vec&, const Vec&) { return Vec::Zero(1); };
    return {plant, ctrl};
}

/// Exact lifted coordinates (orders 0..q) computed through the models'
/// derivative providers.
inline Vec exact_lift(const ClosedLoopSystem& sys, const Vec& x,
                      const Vec& probe_stack, int q) {
    const int n_y = sys.plant.n_y;
    Vec Y((q + 1) * n_y);
    for (int i = 0; i <= q; ++i)
        Y.segment(i * n_y, n_y) = sys.plant.lie_h(x, probe_stack, i);
    return Y;
}

}  // namespace testutil
