#pragma once

#include "qssdiag/common.hpp"
#include "qssdiag/state.hpp"

#include <functional>
#include <optional>

namespace qssdiag {

struct LinearSolveResult {
    Vec x;
    double condition_estimate = 0.0;
};

/// A pivot fell below 1e-14 * ||A||_inf during LU factorization.
struct SingularMatrix : Error {
    using Error::Error;
};

/// LU with partial pivoting plus an infinity-norm condition estimate.
LinearSolveResult solve_linear(const Mat& a, const Vec& b);

enum class Damping { None, Halving };

struct NewtonConfig {
    double tol_inf = 1e-10;
    int max_iter = 50;
    Damping damping = Damping::Halving;  // halving capped at 8 bisections
};

enum class NewtonStatus { Converged, MaxIterExceeded, SingularJacobian, Diverged };

struct NewtonResult {
    NewtonStatus status = NewtonStatus::MaxIterExceeded;
    int iterations = 0;
    Vec solution;
    double final_residual_norm = 0.0;
    double max_condition = 0.0;  // worst Jacobian condition estimate seen

    bool converged() const { return status == NewtonStatus::Converged; }
};

using ResidualFn = std::function<Vec(const Vec&)>;
using JacobianFn = std::function<Mat(const Vec&)>;

/// Damped Newton iteration; failure modes are encoded in the status,
/// never raised. Diverged means the residual norm grew by more than 1e6
/// relative to the starting norm (or became non-finite).
NewtonResult newton_solve(const ResidualFn& residual, const JacobianFn& jacobian, const Vec& x0,
                          const NewtonConfig& cfg = {});

/// Forward-difference Jacobian with per-variable step max(1e-7, 1e-7*|v|).
Mat fd_jacobian(const ResidualFn& residual, const Vec& x);
Mat fd_jacobian(const ResidualFn& residual, const Vec& x, const Vec& r0);

/// Equilibrium initialization result: the operating point plus the system
/// copy carrying the calibration (load shunts, AVR references, governor
/// setpoints) that makes it an exact equilibrium.
struct Equilibrium {
    SystemSpec system;
    PartitionedState state;
    NewtonResult power_flow;
};

/// Flat-start Newton power flow followed by the device back-solve. The
/// returned state satisfies eval_f = eval_hc = 0 and is a step_hd fixed
/// point; all residuals <= 1e-9. Throws PowerFlowDiverged or
/// InfeasibleDeviceInit.
Equilibrium initialize_equilibrium(const SystemSpec& sys);

}  // namespace qssdiag
