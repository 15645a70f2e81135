#include "qssdiag/dae.hpp"

#include "qssdiag/solvers.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qssdiag {

namespace {

constexpr double kGridTol = 1e-6;  // tolerance for hitting a sampling instant

double safe_pow(double base, double expo) {
    if (expo == 0.0) return 1.0;
    if (base <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return std::pow(base, expo);
}

std::string format_ratio(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace

Vec DaeSystem::f_of(const PartitionedState& s, FMode mode) const {
    Vec out(nx());
    eval_f(s, out, mode);
    return out;
}

Vec DaeSystem::g_of(const PartitionedState& s) const {
    Vec out(ny());
    eval_g(s, out);
    return out;
}

Vec DaeSystem::hc_of(const PartitionedState& s) const {
    Vec out(nzc());
    eval_hc(s, out);
    return out;
}

bool DaeSystem::zd_transition(const Vec& before, const Vec& after) const {
    if (before.size() != after.size()) return true;
    return before != after;
}

std::string DaeSystem::describe_zd_change(const Vec&, const Vec&) const { return "z_d change"; }

PowerDae::PowerDae(const SystemSpec& sys, TopologyOverlay overlay)
    : sys_(&sys), layout_(StateLayout::build(sys)), overlay_(std::move(overlay)) {}

PowerDae::PowerDae(const SystemSpec& sys, CMat fixed_ybus)
    : sys_(&sys),
      layout_(StateLayout::build(sys)),
      fixed_ybus_mode_(true),
      ybus_(std::move(fixed_ybus)),
      ybus_valid_(true) {}

void PowerDae::set_overlay(TopologyOverlay overlay) {
    if (fixed_ybus_mode_) throw Error("PowerDae: cannot set overlay in fixed-ybus mode");
    overlay_ = std::move(overlay);
    ybus_valid_ = false;
}

std::vector<double> PowerDae::taps_of(const PartitionedState& s) const {
    std::vector<double> taps(sys_->ltcs.size());
    for (size_t i = 0; i < taps.size(); ++i) taps[i] = s.z_d(layout_->ltc_zd[i]);
    return taps;
}

const CMat& PowerDae::ybus_for(const PartitionedState& s) const {
    if (fixed_ybus_mode_) return ybus_;
    auto taps = taps_of(s);
    if (!ybus_valid_ || ybus_version_ != overlay_.topology_version || taps != ybus_taps_) {
        ybus_ = build_admittance(*sys_, taps, overlay_).y;
        ybus_taps_ = std::move(taps);
        ybus_version_ = overlay_.topology_version;
        ybus_valid_ = true;
    }
    return ybus_;
}

void PowerDae::eval_f(const PartitionedState& s, Eigen::Ref<Vec> out, FMode mode) const {
    const auto& sys = *sys_;
    const auto& lay = *layout_;
    for (size_t gi = 0; gi < sys.generators.size(); ++gi) {
        const auto& gen = sys.generators[gi];
        const int off = lay.gen_x[gi];
        const double delta = s.x(off);
        const double omega = s.x(off + 1);
        const double eqp = s.x(off + 2);
        const double v = s.y(lay.bus_v(gen.bus_idx));
        const double theta = s.y(lay.bus_theta(gen.bus_idx));
        const double a = delta - theta;

        double efd;
        if (lay.gen_efd_x[gi] >= 0) {
            efd = s.x(lay.gen_efd_x[gi]);
        } else if (sys.calibration) {
            efd = sys.calibration->gen_e_fd_fixed[gi];
        } else {
            throw Error("eval_f: generator '" + gen.id + "' has no AVR; calibrate the system first");
        }

        double p_m;
        if (sys.gov_of_gen[gi] >= 0) {
            p_m = s.z_c(lay.gov_zc[sys.gov_of_gen[gi]]);
        } else if (sys.calibration) {
            p_m = sys.calibration->gen_p_m_fixed[gi];
        } else {
            p_m = gen.p_set;
        }

        const double i_d = (eqp - v * std::cos(a)) / gen.x_d_prime;
        const double p_e = eqp * v * std::sin(a) / gen.x_d_prime;

        out(off) = gen.omega_s * (omega - 1.0);
        out(off + 1) = (p_m - p_e - gen.d * (omega - 1.0)) / (2.0 * gen.h);
        out(off + 2) = (-eqp - (gen.x_d - gen.x_d_prime) * i_d + efd) / gen.t_d0_prime;

        if (lay.gen_efd_x[gi] >= 0) {
            const auto& avr = sys.avrs[sys.avr_of_gen[gi]];
            double v_ref;
            if (sys.calibration) v_ref = sys.calibration->avr_v_ref[sys.avr_of_gen[gi]];
            else if (avr.v_ref) v_ref = *avr.v_ref;
            else throw Error("eval_f: avr '" + avr.id + "' has no v_ref; calibrate the system first");

            double target = avr.k_a * (v_ref - v);
            if (sys.oxl_of_gen[gi] >= 0) {
                const int ox = lay.oxl_zd[sys.oxl_of_gen[gi]];
                if (s.z_d(ox) >= 0.5) target = std::min(target, sys.oxls[sys.oxl_of_gen[gi]].e_fd_limit);
            }
            if (mode == FMode::Equilibrium) {
                out(lay.gen_efd_x[gi]) = efd - std::clamp(target, avr.e_fd_min, avr.e_fd_max);
            } else {
                double raw = (-efd + target) / avr.t_e;
                if (efd >= avr.e_fd_max && raw > 0.0) raw = 0.0;
                if (efd <= avr.e_fd_min && raw < 0.0) raw = 0.0;
                out(lay.gen_efd_x[gi]) = raw;
            }
        }
    }
}

void PowerDae::eval_g(const PartitionedState& s, Eigen::Ref<Vec> out) const {
    eval_g_with(s, ybus_for(s), out);
}

void PowerDae::eval_g_with(const PartitionedState& s, const CMat& ybus, Eigen::Ref<Vec> out) const {
    const auto& sys = *sys_;
    const auto& lay = *layout_;
    const int n = sys.n_buses();

    // network flow P_i, Q_i
    for (int i = 0; i < n; ++i) {
        const double vi = s.y(lay.bus_v(i));
        const double ti = s.y(lay.bus_theta(i));
        double p_net = 0.0, q_net = 0.0;
        for (int j = 0; j < n; ++j) {
            const Complex yij = ybus(i, j);
            if (yij == Complex(0.0, 0.0)) continue;
            const double vj = s.y(lay.bus_v(j));
            const double tij = ti - s.y(lay.bus_theta(j));
            p_net += vi * vj * (yij.real() * std::cos(tij) + yij.imag() * std::sin(tij));
            q_net += vi * vj * (yij.real() * std::sin(tij) - yij.imag() * std::cos(tij));
        }
        out(2 * i) = -p_net;
        out(2 * i + 1) = -q_net;
    }

    for (size_t gi = 0; gi < sys.generators.size(); ++gi) {
        const auto& gen = sys.generators[gi];
        const int off = lay.gen_x[gi];
        const double delta = s.x(off);
        const double eqp = s.x(off + 2);
        const double v = s.y(lay.bus_v(gen.bus_idx));
        const double theta = s.y(lay.bus_theta(gen.bus_idx));
        const double a = delta - theta;
        out(2 * gen.bus_idx) += eqp * v * std::sin(a) / gen.x_d_prime;
        out(2 * gen.bus_idx + 1) += (eqp * v * std::cos(a) - v * v) / gen.x_d_prime;
    }

    for (size_t ei = 0; ei < sys.erl_loads.size(); ++ei) {
        const auto& erl = sys.erl_loads[ei];
        const double v = s.y(lay.bus_v(erl.bus_idx));
        const double xp = s.z_c(lay.erl_zc[ei]);
        const double xq = s.z_c(lay.erl_zc[ei] + 1);
        out(2 * erl.bus_idx) -= xp + erl.p0 * safe_pow(v / erl.v0, erl.alpha_t);
        out(2 * erl.bus_idx + 1) -= xq + erl.q0 * safe_pow(v / erl.v0, erl.beta_t);
    }

    // slack is an ideal source: pinned magnitude and angle
    const int sb = sys.slack_bus;
    out(2 * sb) = s.y(lay.bus_v(sb)) - *sys.buses[sb].v_set;
    out(2 * sb + 1) = s.y(lay.bus_theta(sb));
}

void PowerDae::eval_hc(const PartitionedState& s, Eigen::Ref<Vec> out) const {
    const auto& sys = *sys_;
    const auto& lay = *layout_;
    for (size_t vi = 0; vi < sys.governors.size(); ++vi) {
        const auto& gov = sys.governors[vi];
        const double p_m = s.z_c(lay.gov_zc[vi]);
        const double omega = s.x(lay.gen_x[gov.gen_idx] + 1);
        const double p_m0 = sys.calibration ? sys.calibration->gov_p_m0[vi] : gov.p_m0;
        out(lay.gov_zc[vi]) = (-p_m + p_m0 - gov.k_g * (omega - 1.0)) / gov.t_g;
    }
    for (size_t ei = 0; ei < sys.erl_loads.size(); ++ei) {
        const auto& erl = sys.erl_loads[ei];
        const double v = s.y(lay.bus_v(erl.bus_idx));
        const double xp = s.z_c(lay.erl_zc[ei]);
        const double xq = s.z_c(lay.erl_zc[ei] + 1);
        const double r = v / erl.v0;
        out(lay.erl_zc[ei]) = (-xp + erl.p0 * (safe_pow(r, erl.alpha_s) - safe_pow(r, erl.alpha_t))) / erl.t_p;
        out(lay.erl_zc[ei] + 1) =
            (-xq + erl.q0 * (safe_pow(r, erl.beta_s) - safe_pow(r, erl.beta_t))) / erl.t_q;
    }
}

Vec PowerDae::step_hd(const PartitionedState& s, double now) const {
    const auto& sys = *sys_;
    const auto& lay = *layout_;
    Vec zd = s.z_d;

    for (size_t li = 0; li < sys.ltcs.size(); ++li) {
        const auto& ltc = sys.ltcs[li];
        const double k = std::round(now / ltc.period_s);
        if (k < 0.5 || std::abs(now - k * ltc.period_s) > kGridTol) continue;
        const double v = s.y(lay.bus_v(ltc.controlled_bus_idx));
        const int idx = lay.ltc_zd[li];
        const double m = zd(idx);
        if (v > ltc.v_ref + ltc.deadband && m < ltc.m_max - 1e-12) {
            zd(idx) = std::min(m + ltc.delta_m, ltc.m_max);
        } else if (v < ltc.v_ref - ltc.deadband && m > ltc.m_min + 1e-12) {
            zd(idx) = std::max(m - ltc.delta_m, ltc.m_min);
        }
    }

    for (size_t oi = 0; oi < sys.oxls.size(); ++oi) {
        const auto& oxl = sys.oxls[oi];
        const int off = lay.oxl_zd[oi];
        if (zd(off) >= 0.5) continue;  // latched
        const double efd = s.x(lay.gen_efd_x[oxl.gen_idx]);
        if (efd > oxl.e_fd_limit) {
            if (zd(off + 1) < 0.0) zd(off + 1) = now;
            if (now - zd(off + 1) >= oxl.delay_s - 1e-9) zd(off) = 1.0;
        } else {
            zd(off + 1) = -1.0;
        }
    }
    return zd;
}

double PowerDae::next_discrete_time(const PartitionedState& s, double after) const {
    const auto& sys = *sys_;
    const auto& lay = *layout_;
    double next = std::numeric_limits<double>::infinity();
    for (const auto& ltc : sys.ltcs) {
        const double k = std::floor(after / ltc.period_s + kGridTol) + 1.0;
        next = std::min(next, std::max(k, 1.0) * ltc.period_s);
    }
    for (size_t oi = 0; oi < sys.oxls.size(); ++oi) {
        const int off = lay.oxl_zd[oi];
        if (s.z_d(off) >= 0.5) continue;
        const double viol_start = s.z_d(off + 1);
        if (viol_start >= 0.0) {
            const double expiry = viol_start + sys.oxls[oi].delay_s;
            if (expiry > after + 1e-9) next = std::min(next, expiry);
        }
    }
    return next;
}

bool PowerDae::zd_transition(const Vec& before, const Vec& after) const {
    const auto& lay = *layout_;
    for (int idx : lay.ltc_zd)
        if (before(idx) != after(idx)) return true;
    for (int off : lay.oxl_zd)
        if (before(off) != after(off)) return true;
    return false;
}

std::string PowerDae::describe_zd_change(const Vec& before, const Vec& after) const {
    const auto& sys = *sys_;
    const auto& lay = *layout_;
    std::string out;
    for (size_t li = 0; li < sys.ltcs.size(); ++li) {
        const int idx = lay.ltc_zd[li];
        if (before(idx) != after(idx)) {
            if (!out.empty()) out += "; ";
            out += "ltc " + sys.ltcs[li].id + " tap " + format_ratio(before(idx)) + " -> " +
                   format_ratio(after(idx));
        }
    }
    for (size_t oi = 0; oi < sys.oxls.size(); ++oi) {
        const int off = lay.oxl_zd[oi];
        if (before(off) != after(off)) {
            if (!out.empty()) out += "; ";
            out += "oxl " + sys.oxls[oi].id + (after(off) >= 0.5 ? " activated" : " released");
        }
    }
    return out.empty() ? "z_d change" : out;
}

JacobianBlocks jacobianBlocksImpl(const DaeSystem& model, const PartitionedState& s) {
    JacobianBlocks b;
    const int nx = model.nx(), ny = model.ny(), nzc = model.nzc();
    b.f_x = Mat(nx, nx);
    b.f_y = Mat(nx, ny);
    b.g_x = Mat(ny, nx);
    b.g_y = Mat(ny, ny);
    b.h_x = Mat(nzc, nx);
    b.h_y = Mat(nzc, ny);
    b.h_zc = Mat(nzc, nzc);

    const Vec f0 = model.f_of(s);
    const Vec g0 = model.g_of(s);
    const Vec h0 = model.hc_of(s);

    PartitionedState p = s;
    auto col = [&](double* slot, int j, Mat* fc, Mat* gc, Mat* hc) {
        const double v = *slot;
        const double h = std::max(1e-7, 1e-7 * std::abs(v));
        *slot = v + h;
        if (fc) fc->col(j) = (model.f_of(p) - f0) / h;
        if (gc) gc->col(j) = (model.g_of(p) - g0) / h;
        if (hc) hc->col(j) = (model.hc_of(p) - h0) / h;
        *slot = v;
    };
    for (int j = 0; j < nx; ++j) col(&p.x(j), j, &b.f_x, &b.g_x, &b.h_x);
    for (int j = 0; j < ny; ++j) col(&p.y(j), j, &b.f_y, &b.g_y, &b.h_y);
    for (int j = 0; j < nzc; ++j) col(&p.z_c(j), j, nullptr, nullptr, &b.h_zc);
    return b;
}

JacobianBlocks jacobian_blocks(const DaeSystem& model, const PartitionedState& s) {
    return jacobianBlocksImpl(model, s);
}

JacobianBlocks jacobian_blocks(const SystemSpec& sys, const PartitionedState& s,
                               const AdmittanceMatrix& adm) {
    PowerDae model(sys, adm.y);
    return jacobianBlocksImpl(model, s);
}

namespace {

struct LuWithCondition {
    Eigen::PartialPivLU<Mat> lu;
    double condition = 0.0;
    bool singular = false;
};

LuWithCondition factor_with_condition(const Mat& a) {
    LuWithCondition out;
    const int n = static_cast<int>(a.rows());
    if (n == 0) {
        out.condition = 1.0;
        return out;
    }
    const double norm_a = a.cwiseAbs().rowwise().sum().maxCoeff();
    out.lu.compute(a);
    const Vec pivots = out.lu.matrixLU().diagonal().cwiseAbs();
    if ((pivots.array() <= 1e-14 * norm_a).any()) {
        out.singular = true;
        out.condition = 1e300;
        return out;
    }
    Vec row_sums = Vec::Zero(n);
    Vec e = Vec::Zero(n);
    for (int j = 0; j < n; ++j) {
        e(j) = 1.0;
        row_sums += out.lu.solve(e).cwiseAbs();
        e(j) = 0.0;
    }
    out.condition = norm_a * row_sums.maxCoeff();
    if (!std::isfinite(out.condition)) out.condition = 1e300;
    return out;
}

}  // namespace

Mat reduced_fast_jacobian(const JacobianBlocks& blocks) {
    if (blocks.g_y.rows() != blocks.g_y.cols())
        throw Error("reduced_fast_jacobian: g_y must be square");
    if (blocks.g_y.rows() == 0) return blocks.f_x;
    auto fac = factor_with_condition(blocks.g_y);
    if (fac.singular || fac.condition > kSingularCondition)
        throw SingularAlgebraic("reduced_fast_jacobian: g_y condition estimate " +
                                std::to_string(fac.condition));
    return blocks.f_x - blocks.f_y * fac.lu.solve(blocks.g_x);
}

SpectrumResult eigenvalues(const Mat& m) {
    if (m.rows() != m.cols()) throw Error("eigenvalues: matrix must be square");
    SpectrumResult out;
    if (m.rows() == 0) return out;
    Eigen::EigenSolver<Mat> es(m, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success) throw Error("eigenvalues: QR iteration did not converge");
    const auto& ev = es.eigenvalues();
    out.eigenvalues.reserve(ev.size());
    for (int i = 0; i < ev.size(); ++i) out.eigenvalues.push_back(ev(i));
    std::sort(out.eigenvalues.begin(), out.eigenvalues.end(), [](Complex a, Complex b) {
        if (a.real() != b.real()) return a.real() < b.real();
        return a.imag() < b.imag();
    });
    for (const auto& l : out.eigenvalues) out.max_real_part = std::max(out.max_real_part, l.real());
    return out;
}

GammaSResult gamma_s_membership(const DaeSystem& model, const PartitionedState& s,
                                double manifold_tol) {
    GammaSResult res;
    const Vec f = model.f_of(s);
    const Vec g = model.g_of(s);
    const double fn = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    const double gn = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    if (!(fn <= manifold_tol && gn <= manifold_tol)) {
        res.kind = GammaSKind::NotOnManifold;
        res.detail = "||f||=" + std::to_string(fn) + " ||g||=" + std::to_string(gn);
        return res;
    }
    const auto blocks = jacobian_blocks(model, s);
    auto fac = factor_with_condition(blocks.g_y);
    res.g_y_condition_estimate = fac.condition;
    if (fac.singular || fac.condition > kSingularCondition) {
        res.kind = GammaSKind::SingularAlgebraic;
        return res;
    }
    Mat reduced = blocks.f_x;
    if (blocks.g_y.rows() > 0 && blocks.f_x.rows() > 0)
        reduced -= blocks.f_y * fac.lu.solve(blocks.g_x);
    const auto spec = eigenvalues(reduced);
    res.max_real_part = spec.max_real_part;
    if (spec.max_real_part < -kStabilityMargin) res.kind = GammaSKind::InGammaS;
    else res.kind = GammaSKind::UnstableFast;
    return res;
}

GammaSResult gamma_s_membership(const SystemSpec& sys, const PartitionedState& s,
                                const AdmittanceMatrix& adm, double manifold_tol) {
    PowerDae model(sys, adm.y);
    return gamma_s_membership(model, s, manifold_tol);
}

Vec eval_f(const SystemSpec& sys, const PartitionedState& s) {
    PowerDae model(sys);
    return model.f_of(s);
}

Vec eval_g(const SystemSpec& sys, const PartitionedState& s, const AdmittanceMatrix& adm) {
    PowerDae model(sys);
    Vec out(model.ny());
    model.eval_g_with(s, adm.y, out);
    return out;
}

Vec eval_hc(const SystemSpec& sys, const PartitionedState& s) {
    PowerDae model(sys);
    return model.hc_of(s);
}

Vec step_hd(const SystemSpec& sys, const PartitionedState& s, double now) {
    PowerDae model(sys);
    return model.step_hd(s, now);
}

}  // namespace qssdiag
