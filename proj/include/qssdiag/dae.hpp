#pragma once

#include "qssdiag/common.hpp"
#include "qssdiag/netmodel.hpp"
#include "qssdiag/state.hpp"

#include <limits>
#include <memory>

namespace qssdiag {

/// Residual families of a two-timescale DAE
///
///   x'   = f(z_c, z_d, x, y)        fast continuous
///   0    = g(z_c, z_d, x, y)        algebraic
///   z_c' = h_c(z_c, z_d, x, y)      slow continuous
///   z_d+ = h_d(z_c, z_d, x, y)      slow discrete
///
/// Equilibrium mode replaces hard anti-windup clamps (derivative rows that
/// are identically zero at a bound) by pinned-state rows so that f = 0 is a
/// well-posed algebraic system; both forms have identical solution sets.
class DaeSystem {
public:
    enum class FMode { Derivative, Equilibrium };

    virtual ~DaeSystem() = default;

    virtual int nx() const = 0;
    virtual int nzc() const = 0;
    virtual int nzd() const { return 0; }
    virtual int ny() const = 0;

    virtual void eval_f(const PartitionedState& s, Eigen::Ref<Vec> out,
                        FMode mode = FMode::Derivative) const = 0;
    virtual void eval_g(const PartitionedState& s, Eigen::Ref<Vec> out) const = 0;
    virtual void eval_hc(const PartitionedState& s, Eigen::Ref<Vec> out) const = 0;

    virtual Vec step_hd(const PartitionedState& s, double now) const { return s.z_d; }
    /// Earliest discrete-event instant strictly after `after`, or +inf.
    virtual double next_discrete_time(const PartitionedState&, double after) const {
        (void)after;
        return std::numeric_limits<double>::infinity();
    }
    /// Whether a z_d update is an actionable transition (tap move, limiter
    /// activation) as opposed to bookkeeping (timers).
    virtual bool zd_transition(const Vec& before, const Vec& after) const;
    virtual std::string describe_zd_change(const Vec& before, const Vec& after) const;

    virtual std::shared_ptr<const StateLayout> layout() const = 0;

    Vec f_of(const PartitionedState& s, FMode mode = FMode::Derivative) const;
    Vec g_of(const PartitionedState& s) const;
    Vec hc_of(const PartitionedState& s) const;
};

/// The power-system DAE bound to one SystemSpec. Holds the current
/// topology overlay and caches the admittance matrix keyed on
/// (topology_version, tap ratios). One instance per concurrent run.
class PowerDae : public DaeSystem {
public:
    explicit PowerDae(const SystemSpec& sys, TopologyOverlay overlay = {});
    /// Variant pinned to a caller-supplied admittance matrix (one-shot
    /// evaluations at a known topology).
    PowerDae(const SystemSpec& sys, CMat fixed_ybus);

    const SystemSpec& system() const { return *sys_; }
    void set_overlay(TopologyOverlay overlay);
    const TopologyOverlay& overlay() const { return overlay_; }
    const CMat& ybus_for(const PartitionedState& s) const;

    int nx() const override { return layout_->nx; }
    int nzc() const override { return layout_->nzc; }
    int nzd() const override { return layout_->nzd; }
    int ny() const override { return layout_->ny; }

    void eval_f(const PartitionedState& s, Eigen::Ref<Vec> out, FMode mode) const override;
    void eval_g(const PartitionedState& s, Eigen::Ref<Vec> out) const override;
    void eval_hc(const PartitionedState& s, Eigen::Ref<Vec> out) const override;
    Vec step_hd(const PartitionedState& s, double now) const override;
    double next_discrete_time(const PartitionedState& s, double after) const override;
    bool zd_transition(const Vec& before, const Vec& after) const override;
    std::string describe_zd_change(const Vec& before, const Vec& after) const override;
    std::shared_ptr<const StateLayout> layout() const override { return layout_; }

    void eval_g_with(const PartitionedState& s, const CMat& ybus, Eigen::Ref<Vec> out) const;
    std::vector<double> taps_of(const PartitionedState& s) const;

private:
    const SystemSpec* sys_;
    std::shared_ptr<const StateLayout> layout_;
    TopologyOverlay overlay_;
    bool fixed_ybus_mode_ = false;
    mutable CMat ybus_;
    mutable std::vector<double> ybus_taps_;
    mutable long ybus_version_ = -1;
    mutable bool ybus_valid_ = false;
};

struct JacobianBlocks {
    Mat f_x, f_y, g_x, g_y, h_x, h_y, h_zc;
};

/// All blocks by forward finite differences with step max(1e-7, 1e-7*|v|).
JacobianBlocks jacobian_blocks(const DaeSystem& model, const PartitionedState& s);
JacobianBlocks jacobian_blocks(const SystemSpec& sys, const PartitionedState& s,
                               const AdmittanceMatrix& adm);

/// g_y is too ill-conditioned to reduce (condition estimate above 1e12).
struct SingularAlgebraic : Error {
    using Error::Error;
};

/// f_x - f_y * solve(g_y, g_x). Throws SingularAlgebraic.
Mat reduced_fast_jacobian(const JacobianBlocks& blocks);

struct SpectrumResult {
    std::vector<Complex> eigenvalues;
    double max_real_part = -std::numeric_limits<double>::infinity();
    double g_y_condition_estimate = 0.0;
};

/// Dense nonsymmetric eigenvalues via the QR algorithm. Throws Error on
/// non-convergence (should not occur on conforming fixtures).
SpectrumResult eigenvalues(const Mat& m);

enum class GammaSKind { InGammaS, UnstableFast, SingularAlgebraic, NotOnManifold };

struct GammaSResult {
    GammaSKind kind = GammaSKind::NotOnManifold;
    double max_real_part = -std::numeric_limits<double>::infinity();
    double g_y_condition_estimate = 0.0;
    std::string detail;
};

/// Membership of an on-manifold point in Gamma_s: every eigenvalue of the
/// reduced fast Jacobian has real part < -1e-8 and g_y is nonsingular.
/// Points with ||f||_inf or ||g||_inf above manifold_tol report
/// NotOnManifold.
GammaSResult gamma_s_membership(const DaeSystem& model, const PartitionedState& s,
                                double manifold_tol = 1e-8);
GammaSResult gamma_s_membership(const SystemSpec& sys, const PartitionedState& s,
                                const AdmittanceMatrix& adm, double manifold_tol = 1e-8);

// Spec-level one-shot wrappers over PowerDae.
Vec eval_f(const SystemSpec& sys, const PartitionedState& s);
Vec eval_g(const SystemSpec& sys, const PartitionedState& s, const AdmittanceMatrix& adm);
Vec eval_hc(const SystemSpec& sys, const PartitionedState& s);
Vec step_hd(const SystemSpec& sys, const PartitionedState& s, double now);

constexpr double kStabilityMargin = 1e-8;   // strict Hurwitz margin for Gamma_s
constexpr double kSingularCondition = 1e12; // condition threshold for singularity

}  // namespace qssdiag
