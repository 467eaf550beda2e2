#include "probest/dynamics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace probest {

namespace {

Vec checked(Vec v, Eigen::Index expected, const char* who) {
    if (v.size() != expected)
        throw Error(ErrorKind::model,
                    std::string("model evaluation: ") + who +
                        " returned wrong dimension");
    if (!v.allFinite())
        throw Error(ErrorKind::model, std::string("model evaluation: ") + who +
                                          " returned a non-finite value");
    return v;
}

void append_vec(std::string& s, const Vec& v, char* buf, size_t bufsz) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::snprintf(buf, bufsz, ",%.17g", v[i]);
        s += buf;
    }
}

}  // namespace

AttackChannel AttackChannel::silent_channel(int n_y) {
    AttackChannel ch;
    ch.mode = Mode::silent;
    Vec zero = Vec::Zero(n_y);
    ch.a = [zero](double) { return zero; };
    return ch;
}

void ClosedLoopSystem::validate() const {
    const auto& p = plant;
    const auto& c = controller;
    if (p.n_p <= 0 || p.n_u <= 0 || p.n_y <= 0 || c.n_c < 0)
        throw Error(ErrorKind::model, "system: nonpositive dimension");
    Vec xp0 = Vec::Zero(p.n_p), u0 = Vec::Zero(p.n_u), xc0 = Vec::Zero(c.n_c);
    checked(p.f_p(xp0, u0), p.n_p, "f_p");
    Vec y0 = checked(p.h(xp0), p.n_y, "h");
    checked(c.f_c(xc0, y0), c.n_c, "f_c");
    checked(c.kappa(xc0, y0), p.n_u, "kappa");
    if (p.lie_h) {
        Vec x0 = Vec::Zero(dim());
        Vec stack = Vec::Zero(p.n_y);
        Vec l0 = checked(p.lie_h(x0, stack, 0), p.n_y, "lie_h");
        if ((l0 - y0).cwiseAbs().maxCoeff() > 0.0)
            throw Error(ErrorKind::model, "system: lie_h(.,.,0) must equal h");
    }
}

void closed_loop_field(const ClosedLoopSystem& sys, const Vec& x, const Vec& y,
                       Vec& dx) {
    const int n_p = sys.plant.n_p;
    const int n_c = sys.controller.n_c;
    if (x.size() != n_p + n_c)
        throw Error(ErrorKind::model, "closed_loop_field: state dimension mismatch");
    Vec xp = x.head(n_p);
    Vec xc = x.tail(n_c);
    Vec u = checked(sys.controller.kappa(xc, y), sys.plant.n_u, "kappa");
    dx.resize(n_p + n_c);
    dx.head(n_p) = checked(sys.plant.f_p(xp, u), n_p, "f_p");
    dx.tail(n_c) = checked(sys.controller.f_c(xc, y), n_c, "f_c");
}

Vec closed_loop_field(const ClosedLoopSystem& sys, const Vec& x, const Vec& y) {
    Vec dx;
    closed_loop_field(sys, x, y, dx);
    return dx;
}

Vec effective_output(const PlantModel& plant, const Vec& x_p, double t,
                     const ProbingSchedule& schedule, const ProbeSignal& probe) {
    Classification c = classify(t, schedule);
    if (c.probing) return checked(probe.value(c.offset), plant.n_y, "probe");
    return checked(plant.h(x_p), plant.n_y, "h");
}

Vec probed_field(const ClosedLoopSystem& sys, const Vec& x, double t,
                 const ProbingSchedule& schedule, const ProbeSignal& probe) {
    Vec y = effective_output(sys.plant, x.head(sys.plant.n_p), t, schedule, probe);
    return closed_loop_field(sys, x, y);
}

namespace detail {

void Rk4Workspace::resize(Eigen::Index n) {
    k1_.resize(n);
    k2_.resize(n);
    k3_.resize(n);
    k4_.resize(n);
    tmp_.resize(n);
}

void Rk4Workspace::step(const Field& f, double t, double h, Vec& x) {
    f(t, x, k1_);
    tmp_ = x + (0.5 * h) * k1_;
    f(t + 0.5 * h, tmp_, k2_);
    tmp_ = x + (0.5 * h) * k2_;
    f(t + 0.5 * h, tmp_, k3_);
    tmp_ = x + h * k3_;
    f(t + h, tmp_, k4_);
    x += (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
}

}  // namespace detail

SimulationTrace integrate(const Field& field, const Vec& x0, double t0,
                          double t1, double h_step, const IntegrateOptions& opts) {
    if (!(t1 > t0)) throw Error(ErrorKind::config, "integrate: t1 must exceed t0");
    if (!(h_step > 0.0)) throw Error(ErrorKind::config, "integrate: h_step must be positive");
    const double span = t1 - t0;
    const long n_steps = std::lround(span / h_step);
    if (n_steps < 1 || std::abs(span - n_steps * h_step) > 1e-9 * std::max(1.0, span))
        throw Error(ErrorKind::config,
                    "integrate: h_step does not divide the horizon");
    const int stride = std::max(1, opts.record_stride);
    if (n_steps % stride != 0)
        throw Error(ErrorKind::config,
                    "integrate: record stride does not divide the step count");

    SimulationTrace trace;
    trace.t0 = t0;
    trace.h_step = h_step * stride;
    trace.t.reserve(n_steps / stride + 1);
    trace.x.reserve(n_steps / stride + 1);

    detail::Rk4Workspace ws;
    ws.resize(x0.size());
    Vec x = x0;
    trace.t.push_back(t0);
    trace.x.push_back(x);
    for (long i = 0; i < n_steps; ++i) {
        const double t = t0 + static_cast<double>(i) * h_step;
        ws.step(field, t, h_step, x);
        if (!x.allFinite() || inf_norm(x) > opts.escape_bound) {
            const double t_esc = t + h_step;
            if (opts.truncate_on_escape) {
                trace.escape_time = t_esc;
                return trace;
            }
            throw FiniteEscapeError(
                t_esc, "integrate: state escaped the bound at t = " +
                           std::to_string(t_esc));
        }
        if ((i + 1) % stride == 0) {
            trace.t.push_back(t0 + static_cast<double>(i + 1) * h_step);
            trace.x.push_back(x);
        }
    }
    return trace;
}

std::string SimulationTrace::csv_string() const {
    std::string out;
    char buf[64];
    const Eigen::Index n_x = x.empty() ? 0 : x.front().size();
    const Eigen::Index n_y = y.empty() ? 0 : y.front().size();
    const Eigen::Index n_Y = Yhat.empty() ? 0 : Yhat.front().size();
    const Eigen::Index n_xh = xhat.empty() ? 0 : xhat.front().size();

    out += "t";
    for (Eigen::Index i = 1; i <= n_x; ++i) out += ",x_" + std::to_string(i);
    for (Eigen::Index i = 1; i <= n_y; ++i) out += ",y_" + std::to_string(i);
    for (Eigen::Index i = 1; i <= n_y; ++i) out += ",a_" + std::to_string(i);
    out += ",mode";
    for (Eigen::Index i = 1; i <= n_Y; ++i) out += ",Yhat_" + std::to_string(i);
    for (Eigen::Index i = 1; i <= n_xh; ++i) out += ",xhat_" + std::to_string(i);
    out += "\n";

    for (std::size_t row = 0; row < t.size(); ++row) {
        std::snprintf(buf, sizeof buf, "%.17g", t[row]);
        out += buf;
        append_vec(out, x[row], buf, sizeof buf);
        if (n_y > 0) append_vec(out, y[row], buf, sizeof buf);
        if (n_y > 0) append_vec(out, a[row], buf, sizeof buf);
        out += mode.empty() ? ",0" : ("," + std::to_string(mode[row]));
        if (n_Y > 0) append_vec(out, Yhat[row], buf, sizeof buf);
        if (n_xh > 0) append_vec(out, xhat[row], buf, sizeof buf);
        out += "\n";
    }
    return out;
}

void SimulationTrace::write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::config, "cannot open trace file " + path);
    f << csv_string();
}

}  // namespace probest
