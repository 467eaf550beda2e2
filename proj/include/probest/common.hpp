#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <utility>

namespace probest {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Infinity norm: max absolute component for vectors, induced norm (max
/// absolute row sum) for matrices. The whole library measures this way.
template <typename Derived>
double inf_norm(const Eigen::MatrixBase<Derived>& m) {
    if (m.size() == 0) return 0.0;
    if (m.cols() == 1) return m.cwiseAbs().maxCoeff();
    return m.cwiseAbs().rowwise().sum().maxCoeff();
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

/// Error taxonomy. Kinds map onto CLI exit codes: infeasible -> 3,
/// everything else -> 4 (verdict failures are not errors).
enum class ErrorKind {
    config,          // bad scenario file / bad parameter combination
    model,           // a model callable returned garbage
    design,          // precondition of a design routine violated
    numerical,       // an internal solver failed
    infeasible,      // no parameter satisfies the selection inequalities
    escape,          // finite escape during integration
    reconstruction,  // observability map could not be evaluated
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string msg)
        : std::runtime_error(std::move(msg)), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

class FiniteEscapeError : public Error {
public:
    FiniteEscapeError(double escape_time, std::string msg)
        : Error(ErrorKind::escape, std::move(msg)), escape_time_(escape_time) {}
    double escape_time() const { return escape_time_; }

private:
    double escape_time_;
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return "config";
        case ErrorKind::model: return "model";
        case ErrorKind::design: return "design";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::infeasible: return "infeasible";
        case ErrorKind::escape: return "escape";
        case ErrorKind::reconstruction: return "reconstruction";
    }
    return "unknown";
}

}  // namespace probest
