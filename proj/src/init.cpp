#include "qssdiag/dae.hpp"
#include "qssdiag/solvers.hpp"

#include <cmath>
#include <complex>

namespace qssdiag {

namespace {

double steady_exp_load(double p0, double v, double v0, double alpha) {
    if (alpha == 0.0) return p0;
    return p0 * std::pow(v / v0, alpha);
}

struct PfLayout {
    std::vector<int> theta_of_bus;  // index into unknown vector, -1 if pinned
    std::vector<int> v_of_bus;
    int n_unknowns = 0;
};

}  // namespace

Equilibrium initialize_equilibrium(const SystemSpec& sys_in) {
    SystemSpec sys = sys_in;  // calibrated copy to return
    const int n = sys.n_buses();

    // scheduled active power per bus: governor setpoint or generator p_set
    std::vector<double> p_gen_sched(n, 0.0);
    for (size_t gi = 0; gi < sys.generators.size(); ++gi) {
        const auto& gen = sys.generators[gi];
        const double p = sys.gov_of_gen[gi] >= 0 ? sys.governors[sys.gov_of_gen[gi]].p_m0 : gen.p_set;
        p_gen_sched[gen.bus_idx] += p;
    }
    std::vector<double> p_static(n, 0.0), q_static(n, 0.0);
    for (int b = 0; b < n; ++b) {
        p_static[b] = sys.buses[b].p_load;
        q_static[b] = sys.buses[b].q_load;
    }
    for (const auto& s : sys.static_loads) {
        p_static[s.bus_idx] += s.p;
        q_static[s.bus_idx] += s.q;
    }

    std::vector<double> taps0(sys.ltcs.size());
    for (size_t i = 0; i < sys.ltcs.size(); ++i) taps0[i] = sys.ltcs[i].m0;
    SystemSpec pristine = sys;
    pristine.calibration.reset();
    const CMat ybus_pf = build_admittance(pristine, taps0).y;

    PfLayout pf;
    pf.theta_of_bus.assign(n, -1);
    pf.v_of_bus.assign(n, -1);
    for (int b = 0; b < n; ++b) {
        if (sys.buses[b].kind != BusKind::Slack) pf.theta_of_bus[b] = pf.n_unknowns++;
        if (sys.buses[b].kind == BusKind::PQ) pf.v_of_bus[b] = pf.n_unknowns++;
    }

    auto voltages = [&](const Vec& u, std::vector<double>& v, std::vector<double>& th) {
        v.resize(n);
        th.resize(n);
        for (int b = 0; b < n; ++b) {
            th[b] = pf.theta_of_bus[b] >= 0 ? u(pf.theta_of_bus[b]) : 0.0;
            v[b] = pf.v_of_bus[b] >= 0 ? u(pf.v_of_bus[b]) : *sys.buses[b].v_set;
        }
    };
    auto net_flow = [&](const std::vector<double>& v, const std::vector<double>& th, int i) {
        double p = 0.0, q = 0.0;
        for (int j = 0; j < n; ++j) {
            const Complex yij = ybus_pf(i, j);
            if (yij == Complex(0.0, 0.0)) continue;
            const double tij = th[i] - th[j];
            p += v[i] * v[j] * (yij.real() * std::cos(tij) + yij.imag() * std::sin(tij));
            q += v[i] * v[j] * (yij.real() * std::sin(tij) - yij.imag() * std::cos(tij));
        }
        return std::pair<double, double>(p, q);
    };
    auto erl_demand = [&](const std::vector<double>& v, int bus) {
        double p = 0.0, q = 0.0;
        for (const auto& e : sys.erl_loads) {
            if (e.bus_idx != bus) continue;
            p += steady_exp_load(e.p0, v[bus], e.v0, e.alpha_s);
            q += steady_exp_load(e.q0, v[bus], e.v0, e.beta_s);
        }
        return std::pair<double, double>(p, q);
    };

    auto residual = [&](const Vec& u) {
        std::vector<double> v, th;
        voltages(u, v, th);
        Vec r(pf.n_unknowns);
        for (int b = 0; b < n; ++b) {
            if (pf.theta_of_bus[b] < 0) continue;
            auto [p_net, q_net] = net_flow(v, th, b);
            auto [p_erl, q_erl] = erl_demand(v, b);
            r(pf.theta_of_bus[b]) = p_gen_sched[b] - p_static[b] - p_erl - p_net;
            if (pf.v_of_bus[b] >= 0) r(pf.v_of_bus[b]) = -q_static[b] - q_erl - q_net;
        }
        return r;
    };

    Vec u0(pf.n_unknowns);
    for (int b = 0; b < n; ++b) {
        if (pf.theta_of_bus[b] >= 0) u0(pf.theta_of_bus[b]) = 0.0;
        if (pf.v_of_bus[b] >= 0) u0(pf.v_of_bus[b]) = 1.0;
    }

    NewtonConfig ncfg;
    ncfg.tol_inf = 1e-11;
    auto pfres = newton_solve(residual, [&](const Vec& u) { return fd_jacobian(residual, u); }, u0, ncfg);
    if (!pfres.converged())
        throw PowerFlowDiverged("PowerFlowDiverged: power flow did not converge from flat start "
                                "(final residual " +
                                std::to_string(pfres.final_residual_norm) + ")");
    std::vector<double> v, th;
    voltages(pfres.solution, v, th);
    for (int b = 0; b < n; ++b)
        if (!(v[b] > 0.0))
            throw PowerFlowDiverged("PowerFlowDiverged: non-physical voltage at bus '" +
                                    sys.buses[b].id + "'");

    // calibration: constant-impedance conversion of static loads at the solution
    Calibration cal;
    cal.load_shunt.assign(n, Complex(0.0, 0.0));
    for (int b = 0; b < n; ++b)
        cal.load_shunt[b] = Complex(p_static[b], -q_static[b]) / (v[b] * v[b]);
    cal.avr_v_ref.assign(sys.avrs.size(), 0.0);
    cal.gov_p_m0.assign(sys.governors.size(), 0.0);
    cal.gen_p_m_fixed.assign(sys.generators.size(), 0.0);
    cal.gen_e_fd_fixed.assign(sys.generators.size(), 0.0);

    auto layout = StateLayout::build(sys);
    PartitionedState st = make_state(layout);
    st.t = 0.0;
    for (int b = 0; b < n; ++b) {
        st.y(layout->bus_v(b)) = v[b];
        st.y(layout->bus_theta(b)) = th[b];
    }

    for (size_t gi = 0; gi < sys.generators.size(); ++gi) {
        const auto& gen = sys.generators[gi];
        const int b = gen.bus_idx;
        auto [p_net, q_net] = net_flow(v, th, b);
        auto [p_erl, q_erl] = erl_demand(v, b);
        const double p_gen = p_gen_sched[b];
        const double q_gen = q_net + q_static[b] + q_erl;

        const Complex vbar = std::polar(v[b], th[b]);
        const Complex s_gen(p_gen, q_gen);
        const Complex ibar = std::conj(s_gen / vbar);
        const Complex e_behind = vbar + Complex(0.0, gen.x_d_prime) * ibar;
        const double delta = std::arg(e_behind);
        const double eqp = std::abs(e_behind);
        const double a = delta - th[b];
        const double i_d = (eqp - v[b] * std::cos(a)) / gen.x_d_prime;
        const double e_fd = eqp + (gen.x_d - gen.x_d_prime) * i_d;
        const double p_e = eqp * v[b] * std::sin(a) / gen.x_d_prime;

        const int off = layout->gen_x[gi];
        st.x(off) = delta;
        st.x(off + 1) = 1.0;
        st.x(off + 2) = eqp;

        if (sys.avr_of_gen[gi] >= 0) {
            const auto& avr = sys.avrs[sys.avr_of_gen[gi]];
            if (!(e_fd > avr.e_fd_min && e_fd < avr.e_fd_max))
                throw InfeasibleDeviceInit("InfeasibleDeviceInit: generator '" + gen.id +
                                           "' requires E_fd=" + std::to_string(e_fd) +
                                           " outside AVR limits");
            cal.avr_v_ref[sys.avr_of_gen[gi]] = v[b] + e_fd / avr.k_a;
            st.x(layout->gen_efd_x[gi]) = e_fd;
        } else {
            cal.gen_e_fd_fixed[gi] = e_fd;
        }
        if (sys.oxl_of_gen[gi] >= 0) {
            const auto& oxl = sys.oxls[sys.oxl_of_gen[gi]];
            if (e_fd > oxl.e_fd_limit)
                throw InfeasibleDeviceInit("InfeasibleDeviceInit: generator '" + gen.id +
                                           "' starts above its OXL limit (E_fd=" +
                                           std::to_string(e_fd) + ")");
        }
        if (sys.gov_of_gen[gi] >= 0) cal.gov_p_m0[sys.gov_of_gen[gi]] = p_e;
        else cal.gen_p_m_fixed[gi] = p_e;
    }

    for (size_t vi = 0; vi < sys.governors.size(); ++vi)
        st.z_c(layout->gov_zc[vi]) = cal.gov_p_m0[vi];
    for (size_t ei = 0; ei < sys.erl_loads.size(); ++ei) {
        const auto& e = sys.erl_loads[ei];
        const double vb = v[e.bus_idx];
        st.z_c(layout->erl_zc[ei]) =
            steady_exp_load(e.p0, vb, e.v0, e.alpha_s) - steady_exp_load(e.p0, vb, e.v0, e.alpha_t);
        st.z_c(layout->erl_zc[ei] + 1) =
            steady_exp_load(e.q0, vb, e.v0, e.beta_s) - steady_exp_load(e.q0, vb, e.v0, e.beta_t);
    }
    for (size_t li = 0; li < sys.ltcs.size(); ++li) st.z_d(layout->ltc_zd[li]) = sys.ltcs[li].m0;
    for (size_t oi = 0; oi < sys.oxls.size(); ++oi) {
        st.z_d(layout->oxl_zd[oi]) = 0.0;
        st.z_d(layout->oxl_zd[oi] + 1) = -1.0;
    }

    for (const auto& ltc : sys.ltcs) {
        const double vb = v[ltc.controlled_bus_idx];
        const double m = ltc.m0;
        const bool wants_up = vb > ltc.v_ref + ltc.deadband && m < ltc.m_max - 1e-12;
        const bool wants_down = vb < ltc.v_ref - ltc.deadband && m > ltc.m_min + 1e-12;
        if (wants_up || wants_down)
            throw InfeasibleDeviceInit("InfeasibleDeviceInit: ltc '" + ltc.id +
                                       "' is not at a discrete fixed point at the initial "
                                       "equilibrium (controlled voltage " +
                                       std::to_string(vb) + ")");
    }

    sys.calibration = std::move(cal);

    // verify: the calibrated residuals must vanish at the constructed point
    PowerDae model(sys);
    const Vec f = model.f_of(st);
    const Vec g = model.g_of(st);
    const Vec hc = model.hc_of(st);
    const double worst = std::max({f.size() ? f.cwiseAbs().maxCoeff() : 0.0,
                                   g.size() ? g.cwiseAbs().maxCoeff() : 0.0,
                                   hc.size() ? hc.cwiseAbs().maxCoeff() : 0.0});
    if (!(worst <= 1e-9))
        throw Error("initialize_equilibrium: back-solve left residual " + std::to_string(worst));

    Equilibrium out;
    out.system = std::move(sys);
    out.state = std::move(st);
    out.power_flow = std::move(pfres);
    return out;
}

}  // namespace qssdiag
