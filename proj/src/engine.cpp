#include "qssdiag/engine.hpp"

#include <algorithm>
#include <cmath>

namespace qssdiag {

std::string to_string(Termination::Kind k) {
    switch (k) {
        case Termination::Kind::ReachedTend: return "ReachedTend";
        case Termination::Kind::ConvergedToSEP: return "ConvergedToSEP";
        case Termination::Kind::SingularityLikely: return "SingularityLikely";
        case Termination::Kind::Diverged: return "Diverged";
    }
    return "?";
}

Vec Trajectory::interpolate(double t) const {
    if (samples.empty()) throw Error("interpolate: empty trajectory");
    if (t <= samples.front().t) return samples.front().flatten();
    if (t >= samples.back().t) return samples.back().flatten();
    auto it = std::lower_bound(samples.begin(), samples.end(), t,
                               [](const PartitionedState& s, double tv) { return s.t < tv; });
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    if (hi.t == lo.t) return hi.flatten();
    const double w = (t - lo.t) / (hi.t - lo.t);
    return (1.0 - w) * lo.flatten() + w * hi.flatten();
}

namespace {

constexpr double kTimeTol = 1e-9;

struct Packing {
    bool use_x = false, use_zc = false, use_y = false;
    int dim = 0;
};

Packing packing_for(const DaeSystem& model, RunMode mode) {
    Packing p;
    switch (mode) {
        case RunMode::Complete:
            p.use_x = p.use_zc = p.use_y = true;
            break;
        case RunMode::Qss:
            p.use_zc = p.use_x = p.use_y = true;
            break;
        case RunMode::Transient:
            p.use_x = p.use_y = true;
            break;
    }
    p.dim = (p.use_x ? model.nx() : 0) + (p.use_zc ? model.nzc() : 0) + (p.use_y ? model.ny() : 0);
    return p;
}

Vec pack(const PartitionedState& s, const Packing& p) {
    Vec u(p.dim);
    int off = 0;
    if (p.use_x) {
        u.segment(off, s.x.size()) = s.x;
        off += static_cast<int>(s.x.size());
    }
    if (p.use_zc) {
        u.segment(off, s.z_c.size()) = s.z_c;
        off += static_cast<int>(s.z_c.size());
    }
    if (p.use_y) u.segment(off, s.y.size()) = s.y;
    return u;
}

void unpack(const Vec& u, const Packing& p, PartitionedState& s) {
    int off = 0;
    if (p.use_x) {
        s.x = u.segment(off, s.x.size());
        off += static_cast<int>(s.x.size());
    }
    if (p.use_zc) {
        s.z_c = u.segment(off, s.z_c.size());
        off += static_cast<int>(s.z_c.size());
    }
    if (p.use_y) s.y = u.segment(off, s.y.size());
}

NewtonConfig newton_cfg(const SimConfig& cfg) {
    NewtonConfig nc;
    nc.tol_inf = cfg.newton_tol;
    nc.max_iter = cfg.newton_max_iter;
    nc.damping = Damping::Halving;
    return nc;
}

}  // namespace

StepResult dae_step(const DaeSystem& model, RunMode mode, const PartitionedState& s, double h,
                    const SimConfig& cfg) {
    const Packing p = packing_for(model, mode);
    const Vec f0 = (mode != RunMode::Qss) ? model.f_of(s) : Vec();
    const Vec hc0 = (mode != RunMode::Transient) ? model.hc_of(s) : Vec();

    PartitionedState work = s;
    work.t = s.t + h;

    auto residual = [&](const Vec& u) {
        unpack(u, p, work);
        Vec r(p.dim);
        int off = 0;
        if (mode == RunMode::Complete || mode == RunMode::Transient) {
            r.segment(off, model.nx()) =
                work.x - s.x - 0.5 * h * (model.f_of(work, DaeSystem::FMode::Derivative) + f0);
            off += model.nx();
        }
        if (mode == RunMode::Qss) {
            r.segment(off, model.nzc()) = work.z_c - s.z_c - 0.5 * h * (model.hc_of(work) + hc0);
            off += model.nzc();
            r.segment(off, model.nx()) = model.f_of(work, DaeSystem::FMode::Equilibrium);
            off += model.nx();
        } else if (mode == RunMode::Complete) {
            r.segment(off, model.nzc()) = work.z_c - s.z_c - 0.5 * h * (model.hc_of(work) + hc0);
            off += model.nzc();
        }
        r.segment(off, model.ny()) = model.g_of(work);
        return r;
    };

    StepResult out;
    out.newton = newton_solve(residual, [&](const Vec& u) { return fd_jacobian(residual, u); },
                              pack(s, p), newton_cfg(cfg));
    if (!out.newton.converged()) return out;
    out.ok = true;
    out.state = s;
    out.state.t = s.t + h;
    unpack(out.newton.solution, p, out.state);
    return out;
}

StepResult algebraic_jump(const DaeSystem& model, RunMode mode, const PartitionedState& s,
                          const SimConfig& cfg) {
    const bool solve_x = (mode == RunMode::Qss);
    const int dim = model.ny() + (solve_x ? model.nx() : 0);
    PartitionedState work = s;

    auto residual = [&](const Vec& u) {
        if (solve_x) {
            work.x = u.head(model.nx());
            work.y = u.tail(model.ny());
        } else {
            work.y = u;
        }
        Vec r(dim);
        if (solve_x) {
            r.head(model.nx()) = model.f_of(work, DaeSystem::FMode::Equilibrium);
            r.tail(model.ny()) = model.g_of(work);
        } else {
            r = model.g_of(work);
        }
        return r;
    };

    Vec u0(dim);
    if (solve_x) {
        u0.head(model.nx()) = s.x;
        u0.tail(model.ny()) = s.y;
    } else {
        u0 = s.y;
    }

    StepResult out;
    out.newton = newton_solve(residual, [&](const Vec& u) { return fd_jacobian(residual, u); }, u0,
                              newton_cfg(cfg));
    if (!out.newton.converged()) return out;
    out.ok = true;
    out.state = s;
    if (solve_x) {
        out.state.x = out.newton.solution.head(model.nx());
        out.state.y = out.newton.solution.tail(model.ny());
    } else {
        out.state.y = out.newton.solution;
    }
    return out;
}

namespace {

Termination::Kind classify_newton_failure(const NewtonResult& nr) {
    if (nr.status == NewtonStatus::SingularJacobian || nr.max_condition > kSingularCondition)
        return Termination::Kind::SingularityLikely;
    return Termination::Kind::Diverged;
}

std::string newton_detail(const NewtonResult& nr) {
    const char* st = nr.status == NewtonStatus::SingularJacobian ? "SingularJacobian"
                     : nr.status == NewtonStatus::Diverged       ? "Diverged"
                     : nr.status == NewtonStatus::MaxIterExceeded ? "MaxIterExceeded"
                                                                  : "Converged";
    return std::string("newton ") + st + ", residual " + std::to_string(nr.final_residual_norm) +
           ", condition " + std::to_string(nr.max_condition);
}

double continuous_norm(const PartitionedState& s) {
    double m = 0.0;
    if (s.z_c.size()) m = std::max(m, s.z_c.cwiseAbs().maxCoeff());
    if (s.x.size()) m = std::max(m, s.x.cwiseAbs().maxCoeff());
    if (s.y.size()) m = std::max(m, s.y.cwiseAbs().maxCoeff());
    return m;
}

/// Newton polish of the equilibrium appropriate to the mode.
std::optional<PartitionedState> polish_sep(const DaeSystem& model, RunMode mode,
                                           const PartitionedState& s, const SimConfig& cfg) {
    const bool with_zc = (mode != RunMode::Transient) && model.nzc() > 0;
    const int dim = model.nx() + model.ny() + (with_zc ? model.nzc() : 0);
    if (dim == 0) return s;
    PartitionedState work = s;
    auto residual = [&](const Vec& u) {
        int off = 0;
        if (with_zc) {
            work.z_c = u.head(model.nzc());
            off = model.nzc();
        }
        work.x = u.segment(off, model.nx());
        work.y = u.tail(model.ny());
        Vec r(dim);
        int roff = 0;
        if (with_zc) {
            r.head(model.nzc()) = model.hc_of(work);
            roff = model.nzc();
        }
        r.segment(roff, model.nx()) = model.f_of(work, DaeSystem::FMode::Equilibrium);
        r.tail(model.ny()) = model.g_of(work);
        return r;
    };
    Vec u0(dim);
    int off = 0;
    if (with_zc) {
        u0.head(model.nzc()) = s.z_c;
        off = model.nzc();
    }
    u0.segment(off, model.nx()) = s.x;
    u0.tail(model.ny()) = s.y;
    auto nr = newton_solve(residual, [&](const Vec& u) { return fd_jacobian(residual, u); }, u0,
                           newton_cfg(cfg));
    if (!nr.converged()) return std::nullopt;
    PartitionedState out = s;
    int o2 = 0;
    if (with_zc) {
        out.z_c = nr.solution.head(model.nzc());
        o2 = model.nzc();
    }
    out.x = nr.solution.segment(o2, model.nx());
    out.y = nr.solution.tail(model.ny());
    return out;
}

}  // namespace

Trajectory run_dae(const DaeSystem& model, RunMode mode, const PartitionedState& s0, double t0,
                   double t_end, const SimConfig& cfg, EngineHooks hooks) {
    Trajectory traj;
    PartitionedState state = s0;
    state.t = t0;

    auto fail = [&](const NewtonResult& nr, double t, const std::string& where) {
        traj.termination.kind = classify_newton_failure(nr);
        traj.termination.t = t;
        traj.termination.detail = where + ": " + newton_detail(nr);
    };

    // restore algebraic consistency at the start (QSS: manifold projection)
    {
        const Vec g0 = model.g_of(state);
        const double gn = g0.size() ? g0.cwiseAbs().maxCoeff() : 0.0;
        double fn = 0.0;
        if (mode == RunMode::Qss) {
            const Vec f0 = model.f_of(state);
            fn = f0.size() ? f0.cwiseAbs().maxCoeff() : 0.0;
        }
        if (gn > cfg.manifold_tol || fn > cfg.manifold_tol) {
            auto jump = algebraic_jump(model, mode, state, cfg);
            if (!jump.ok) {
                traj.samples.push_back(state);
                fail(jump.newton, t0, mode == RunMode::Qss ? "initial manifold projection"
                                                           : "initial algebraic solve");
                return traj;
            }
            state = jump.state;
        }
    }
    traj.samples.push_back(state);

    size_t next_event = 0;
    while (next_event < hooks.scenario_events.size() &&
           hooks.scenario_events[next_event].time <= t0 + kTimeTol)
        ++next_event;

    size_t window_begin = 0;
    const bool discrete_enabled = (mode != RunMode::Transient);

    double t = t0;
    while (t < t_end - kTimeTol) {
        double stop = t_end;
        if (next_event < hooks.scenario_events.size())
            stop = std::min(stop, hooks.scenario_events[next_event].time);
        if (discrete_enabled) stop = std::min(stop, model.next_discrete_time(state, t));
        if (t < cfg.longterm_switch && cfg.longterm_switch < stop)
            stop = std::min(stop, cfg.longterm_switch);

        const double h = std::min(cfg.step_at(t), stop - t);
        const bool lands_on_stop = (t + h >= stop - kTimeTol);

        auto step = dae_step(model, mode, state, h, cfg);
        if (!step.ok) {
            fail(step.newton, t, "trapezoidal step");
            return traj;
        }
        state = step.state;
        if (lands_on_stop) state.t = stop;
        t = state.t;
        traj.samples.push_back(state);

        if (continuous_norm(state) > cfg.max_state_norm) {
            traj.termination.kind = Termination::Kind::Diverged;
            traj.termination.t = t;
            traj.termination.detail = "state norm exceeded " + std::to_string(cfg.max_state_norm);
            return traj;
        }

        // scenario events due at this instant: apply all, then one jump
        bool need_jump = false;
        std::vector<TrajEvent> pending_markers;
        while (next_event < hooks.scenario_events.size() &&
               hooks.scenario_events[next_event].time <= t + kTimeTol) {
            const auto& ev = hooks.scenario_events[next_event];
            std::string desc = hooks.apply_event ? hooks.apply_event(ev) : std::string("event");
            TrajEvent te;
            te.t = t;
            te.kind = TrajEvent::Kind::Scenario;
            te.description = desc;
            te.scenario_event = ev;
            pending_markers.push_back(std::move(te));
            ++next_event;
            need_jump = true;
        }
        if (need_jump) {
            if (hooks.islanded_buses) {
                auto islands = hooks.islanded_buses();
                if (!islands.empty()) {
                    TrajEvent te;
                    te.t = t;
                    te.kind = TrajEvent::Kind::Island;
                    te.description = "island: " + std::to_string(islands.size()) +
                                     " bus(es) disconnected from the slack";
                    pending_markers.push_back(std::move(te));
                }
            }
            auto jump = algebraic_jump(model, mode, state, cfg);
            if (!jump.ok) {
                for (auto& m : pending_markers) {
                    m.post_state = state;
                    traj.events.push_back(std::move(m));
                }
                fail(jump.newton, t, "post-event algebraic solve");
                return traj;
            }
            state = jump.state;
            traj.samples.back() = state;
            for (auto& m : pending_markers) {
                m.post_state = state;
                traj.events.push_back(std::move(m));
            }
        }

        // discrete devices (LTC sampling, OXL timers) at the step boundary
        if (discrete_enabled && model.nzd() > 0) {
            const Vec zd_before = state.z_d;
            const Vec zd_after = model.step_hd(state, t);
            if (zd_after != zd_before) {
                const bool transition = model.zd_transition(zd_before, zd_after);
                state.z_d = zd_after;
                if (transition) {
                    auto jump = algebraic_jump(model, mode, state, cfg);
                    TrajEvent te;
                    te.t = t;
                    te.kind = TrajEvent::Kind::TapChange;
                    te.description = model.describe_zd_change(zd_before, zd_after);
                    if (te.description.find("oxl") != std::string::npos &&
                        te.description.find("ltc") == std::string::npos)
                        te.kind = TrajEvent::Kind::OxlActivated;
                    if (!jump.ok) {
                        te.post_state = state;
                        traj.events.push_back(std::move(te));
                        fail(jump.newton, t, "post-tap algebraic solve");
                        return traj;
                    }
                    state = jump.state;
                    traj.samples.back() = state;
                    te.post_state = state;
                    traj.events.push_back(std::move(te));
                } else {
                    traj.samples.back() = state;
                }
            }
        }

        // SEP detection: residuals small, window movement small, no pending
        // scenario events and no pending discrete actions
        if (next_event >= hooks.scenario_events.size()) {
            const Vec f = model.f_of(state);
            const Vec g = model.g_of(state);
            const double fn = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
            const double gn = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
            double hn = 0.0;
            if (mode != RunMode::Transient) {
                const Vec hc = model.hc_of(state);
                hn = hc.size() ? hc.cwiseAbs().maxCoeff() : 0.0;
            }
            if (fn <= cfg.sep_tol && gn <= cfg.sep_tol && hn <= cfg.sep_tol &&
                !(discrete_enabled && model.discrete_pending(state))) {
                while (window_begin < traj.samples.size() &&
                       traj.samples[window_begin].t < t - cfg.sep_window)
                    ++window_begin;
                const bool window_full =
                    window_begin > 0 ||
                    (traj.samples.front().t <= t - cfg.sep_window + kTimeTol);
                if (window_full) {
                    double movement = 0.0;
                    for (size_t i = window_begin; i < traj.samples.size(); ++i)
                        movement = std::max(movement, state_distance(traj.samples[i], state));
                    if (movement <= cfg.sep_tol) {
                        auto sep = polish_sep(model, mode, state, cfg);
                        if (sep && !(discrete_enabled && model.discrete_pending(*sep))) {
                            sep->t = t;
                            traj.termination.kind = Termination::Kind::ConvergedToSEP;
                            traj.termination.t = t;
                            traj.termination.sep = std::move(sep);
                            traj.termination.detail = "movement " + std::to_string(movement) +
                                                      " over trailing window";
                            return traj;
                        }
                    }
                }
            }
        }
    }

    traj.termination.kind = Termination::Kind::ReachedTend;
    traj.termination.t = t_end;
    return traj;
}

}  // namespace qssdiag
