#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace qssdiag {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;
using Complex = std::complex<double>;

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input text (JSON syntax, missing/ill-typed fields).
struct ParseError : Error {
    using Error::Error;
};

/// Structurally valid input that violates a model invariant.
struct ValidationError : Error {
    using Error::Error;
};

/// The power flow did not converge from a flat start.
struct PowerFlowDiverged : Error {
    using Error::Error;
};

/// Device back-solve produced an infeasible operating point
/// (e.g. required field voltage outside limits).
struct InfeasibleDeviceInit : Error {
    using Error::Error;
};

inline bool nearly_equal(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace qssdiag
