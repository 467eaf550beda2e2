#pragma once

#include <functional>
#include <limits>

#include "probest/common.hpp"

namespace probest {

/**
 * Monotone increasing scalar function with f(0) = 0, used for all
 * comparison-function bookkeeping (class-K / class-K-infinity gains and
 * moduli). The inverse is evaluated analytically when one was supplied,
 * otherwise by bisection on [0, 1e12] to 1e-12 relative tolerance.
 */
class KFunction {
public:
    KFunction() = default;

    explicit KFunction(std::function<double(double)> fwd)
        : fwd_(std::move(fwd)) {}

    KFunction(std::function<double(double)> fwd, std::function<double(double)> inv)
        : fwd_(std::move(fwd)), inv_(std::move(inv)) {}

    bool valid() const { return static_cast<bool>(fwd_); }

    double operator()(double r) const { return fwd_(r); }

    /// Solves f(r) = y for r. Values beyond the bisection bracket clamp to
    /// its upper end; y = +inf maps to +inf so relaxed bounds stay vacuous.
    double inverse(double y) const;

    /// f(r) = slope * r
    static KFunction linear(double slope);

    /// f(r) = a*r + b*r^2  (the usual modulus of a quadratic form on a
    /// bounded region)
    static KFunction affine_quadratic(double a, double b);

private:
    std::function<double(double)> fwd_;
    std::function<double(double)> inv_;
};

/**
 * Exponential surrogate for a KL bound: beta(r, s) = c1 * r * exp(-c2 * s).
 * c2 = +inf is the "already at the origin" sentinel produced when an
 * ensemble never leaves zero.
 */
struct ExpEnvelope {
    double c1 = 1.0;
    double c2 = 0.0;

    double operator()(double r, double s) const {
        if (s <= 0.0) return c1 * r;
        if (std::isinf(c2)) return 0.0;
        return c1 * r * std::exp(-c2 * s);
    }

    bool degenerate() const { return std::isinf(c2); }
};

}  // namespace probest
