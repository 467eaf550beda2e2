#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "probest/common.hpp"
#include "probest/probing.hpp"

namespace probest {

/**
 * Plant with state x_p, input u and sensor output y = h(x_p).
 *
 * lie_h provides the i-th time derivative of the output along the probed
 * dynamics. It receives the full stacked closed-loop state and the probe
 * derivative stack because higher output derivatives generally involve the
 * controller state and the probe signal, not the plant state alone.
 * lie_h(x, *, 0) must coincide with h(x_p).
 */
struct PlantModel {
    int n_p = 0;
    int n_u = 0;
    int n_y = 0;
    std::function<Vec(const Vec& x_p, const Vec& u)> f_p;
    std::function<Vec(const Vec& x_p)> h;
    std::function<Vec(const Vec& x_full, const Vec& y_star_stack, int i)> lie_h;
};

struct ControllerModel {
    int n_c = 0;
    std::function<Vec(const Vec& x_c, const Vec& y)> f_c;
    std::function<Vec(const Vec& x_c, const Vec& y)> kappa;
};

/**
 * Additive sensor corruption. In silent mode the signal is identically
 * zero and the measurement passes through untouched. In override mode the
 * adversary replaces y with the probe signal; the additive value recorded
 * in traces is then derived per sample as y_effective - h(x_p), and the
 * pre-attack measurement stays readable for the estimator.
 */
struct AttackChannel {
    enum class Mode { silent, probing_override };
    Mode mode = Mode::silent;
    std::function<Vec(double)> a;  // additive corruption, length n_y

    static AttackChannel silent_channel(int n_y);
};

struct ClosedLoopSystem {
    PlantModel plant;
    ControllerModel controller;

    int dim() const { return plant.n_p + controller.n_c; }
    Vec plant_part(const Vec& x) const { return x.head(plant.n_p); }
    Vec controller_part(const Vec& x) const { return x.tail(controller.n_c); }

    /// Checks dimensions and that all callables evaluate finite near the
    /// origin; throws a model error naming the offending callable.
    void validate() const;
};

/**
 * Uniform-grid record of a simulation. All series share the number of
 * rows; mode is 1 inside probing intervals and 0 otherwise. Observer
 * columns are present only for estimation runs. escape_time is set when a
 * run was truncated by the finite-escape guard.
 */
struct SimulationTrace {
    double t0 = 0.0;
    double h_step = 0.0;  // record grid step
    std::vector<double> t;
    std::vector<Vec> x;
    std::vector<Vec> y;     // effective output (what the loop consumed)
    std::vector<Vec> a;     // additive attack value
    std::vector<int> mode;  // 1 probing, 0 otherwise
    std::vector<Vec> Yhat;  // lifted observer state, optional
    std::vector<Vec> xhat;  // state estimate, optional
    std::optional<double> escape_time;

    std::size_t rows() const { return t.size(); }
    bool has_observer() const { return !Yhat.empty() || !xhat.empty(); }

    /// Comma-separated serialization: header row, one row per grid point,
    /// floats with 17 significant digits.
    void write_csv(const std::string& path) const;
    std::string csv_string() const;
};

/// Right-hand side in the in-place form used by the integrator.
using Field = std::function<void(double t, const Vec& x, Vec& dx)>;

struct IntegrateOptions {
    double escape_bound = 1e9;
    int record_stride = 1;            // record every stride-th step
    bool truncate_on_escape = false;  // record marker instead of throwing
};

/// Stacked closed-loop vector field (f_p(x_p, kappa(x_c, y)), f_c(x_c, y)).
Vec closed_loop_field(const ClosedLoopSystem& sys, const Vec& x, const Vec& y);

/// In-place variant for hot loops.
void closed_loop_field(const ClosedLoopSystem& sys, const Vec& x, const Vec& y,
                       Vec& dx);

/// Output seen by the loop at time t: the probe during probing intervals,
/// the true measurement otherwise.
Vec effective_output(const PlantModel& plant, const Vec& x_p, double t,
                     const ProbingSchedule& schedule, const ProbeSignal& probe);

/// Closed-loop field driven by the effective output.
Vec probed_field(const ClosedLoopSystem& sys, const Vec& x, double t,
                 const ProbingSchedule& schedule, const ProbeSignal& probe);

/**
 * Classical fixed-step 4th-order integration over [t0, t1]. h_step must
 * divide the span to within 1e-9 relative tolerance. The trace holds
 * every record_stride-th step (plus the final point, which must land on
 * the record grid). Exceeding the escape bound throws a finite-escape
 * error carrying the escape time unless truncation was requested.
 */
SimulationTrace integrate(const Field& field, const Vec& x0, double t0,
                          double t1, double h_step,
                          const IntegrateOptions& opts = {});

namespace detail {

/// Reusable RK4 stage buffers; step() advances x in place.
class Rk4Workspace {
public:
    void resize(Eigen::Index n);
    void step(const Field& f, double t, double h, Vec& x);

private:
    Vec k1_, k2_, k3_, k4_, tmp_;
};

}  // namespace detail

}  // namespace probest
