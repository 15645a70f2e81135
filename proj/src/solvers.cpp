#include "qssdiag/solvers.hpp"

#include <Eigen/LU>

#include <cmath>

namespace qssdiag {

LinearSolveResult solve_linear(const Mat& a, const Vec& b) {
    if (a.rows() != a.cols()) throw Error("solve_linear: matrix must be square");
    if (a.rows() != b.size()) throw Error("solve_linear: dimension mismatch");
    const int n = static_cast<int>(a.rows());
    if (n == 0) return {Vec(0), 1.0};

    const double norm_a = a.cwiseAbs().rowwise().sum().maxCoeff();
    Eigen::PartialPivLU<Mat> lu(a);
    const Vec pivots = lu.matrixLU().diagonal().cwiseAbs();
    if ((pivots.array() <= 1e-14 * norm_a).any())
        throw SingularMatrix("solve_linear: pivot below 1e-14 * ||A||_inf");

    LinearSolveResult out;
    out.x = lu.solve(b);

    // ||A^-1||_inf from unit probes; exact at desk scale
    Vec row_sums = Vec::Zero(n);
    Vec e = Vec::Zero(n);
    for (int j = 0; j < n; ++j) {
        e(j) = 1.0;
        row_sums += lu.solve(e).cwiseAbs();
        e(j) = 0.0;
    }
    out.condition_estimate = norm_a * row_sums.maxCoeff();
    if (!std::isfinite(out.condition_estimate)) out.condition_estimate = 1e300;
    return out;
}

NewtonResult newton_solve(const ResidualFn& residual, const JacobianFn& jacobian, const Vec& x0,
                          const NewtonConfig& cfg) {
    NewtonResult res;
    res.solution = x0;

    Vec x = x0;
    Vec r = residual(x);
    double norm = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
    const double norm0 = std::isfinite(norm) ? std::max(norm, 1e-300) : 1e-300;

    if (!std::isfinite(norm)) {
        res.status = NewtonStatus::Diverged;
        res.final_residual_norm = norm;
        return res;
    }

    for (int it = 0; it <= cfg.max_iter; ++it) {
        if (norm <= cfg.tol_inf) {
            res.status = NewtonStatus::Converged;
            res.iterations = it;
            res.solution = x;
            res.final_residual_norm = norm;
            return res;
        }
        if (it == cfg.max_iter) break;
        if (norm > 1e6 * norm0) {
            res.status = NewtonStatus::Diverged;
            res.iterations = it;
            res.solution = x;
            res.final_residual_norm = norm;
            return res;
        }

        Mat jac = jacobian(x);
        Vec dx;
        try {
            auto lin = solve_linear(jac, -r);
            dx = std::move(lin.x);
            res.max_condition = std::max(res.max_condition, lin.condition_estimate);
        } catch (const SingularMatrix&) {
            res.status = NewtonStatus::SingularJacobian;
            res.iterations = it;
            res.solution = x;
            res.final_residual_norm = norm;
            res.max_condition = 1e300;
            return res;
        }

        double lambda = 1.0;
        Vec x_next = x + dx;
        Vec r_next = residual(x_next);
        double norm_next = r_next.size() ? r_next.cwiseAbs().maxCoeff() : 0.0;
        if (cfg.damping == Damping::Halving) {
            int halvings = 0;
            while ((!std::isfinite(norm_next) || norm_next >= norm) && halvings < 8) {
                lambda *= 0.5;
                ++halvings;
                x_next = x + lambda * dx;
                r_next = residual(x_next);
                norm_next = r_next.size() ? r_next.cwiseAbs().maxCoeff() : 0.0;
            }
        }
        if (!std::isfinite(norm_next)) {
            res.status = NewtonStatus::Diverged;
            res.iterations = it + 1;
            res.solution = x;
            res.final_residual_norm = norm;
            return res;
        }
        x = x_next;
        r = r_next;
        norm = norm_next;
    }

    res.status = NewtonStatus::MaxIterExceeded;
    res.iterations = cfg.max_iter;
    res.solution = x;
    res.final_residual_norm = norm;
    return res;
}

Mat fd_jacobian(const ResidualFn& residual, const Vec& x, const Vec& r0) {
    const int n = static_cast<int>(x.size());
    const int m = static_cast<int>(r0.size());
    Mat jac(m, n);
    Vec xp = x;
    for (int j = 0; j < n; ++j) {
        const double h = std::max(1e-7, 1e-7 * std::abs(x(j)));
        xp(j) = x(j) + h;
        Vec rp = residual(xp);
        xp(j) = x(j);
        jac.col(j) = (rp - r0) / h;
    }
    return jac;
}

Mat fd_jacobian(const ResidualFn& residual, const Vec& x) { return fd_jacobian(residual, x, residual(x)); }

}  // namespace qssdiag
