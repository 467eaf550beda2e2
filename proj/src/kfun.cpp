#include "probest/kfun.hpp"

#include <cmath>

namespace probest {

namespace {
constexpr double kBracketHi = 1e12;
constexpr double kRelTol = 1e-12;
}  // namespace

double KFunction::inverse(double y) const {
    if (!fwd_) throw Error(ErrorKind::numerical, "KFunction: empty function");
    if (inv_) return inv_(y);
    if (std::isinf(y)) return std::numeric_limits<double>::infinity();
    if (y <= 0.0) return 0.0;
    double lo = 0.0, hi = kBracketHi;
    if (fwd_(hi) < y) return hi;
    // plain bisection; monotonicity is all we assume
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (fwd_(mid) < y)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= kRelTol * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

KFunction KFunction::linear(double slope) {
    return KFunction([slope](double r) { return slope * r; },
                     [slope](double y) { return y / slope; });
}

KFunction KFunction::affine_quadratic(double a, double b) {
    return KFunction(
        [a, b](double r) { return a * r + b * r * r; },
        [a, b](double y) {
            if (y <= 0.0) return 0.0;
            if (std::isinf(y)) return std::numeric_limits<double>::infinity();
            if (b == 0.0) return y / a;
            return (-a + std::sqrt(a * a + 4.0 * b * y)) / (2.0 * b);
        });
}

}  // namespace probest
