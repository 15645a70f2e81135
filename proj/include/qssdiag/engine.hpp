#pragma once

#include "qssdiag/dae.hpp"
#include "qssdiag/netmodel.hpp"
#include "qssdiag/solvers.hpp"
#include "qssdiag/state.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace qssdiag {

struct SimConfig {
    double h_transient = 0.005;   // step during the transient window
    double h_longterm = 0.05;     // step after longterm_switch
    double longterm_switch = 30.0;
    double manifold_tol = 1e-8;
    double sep_tol = 1e-6;        // residual + movement bound for SEP detection
    double sep_window = 10.0;     // trailing window for the movement check
    double max_state_norm = 1e6;
    double newton_tol = 1e-10;
    int newton_max_iter = 50;

    double step_at(double t) const { return t < longterm_switch ? h_transient : h_longterm; }
};

struct Termination {
    enum class Kind { ReachedTend, ConvergedToSEP, SingularityLikely, Diverged };
    Kind kind = Kind::ReachedTend;
    double t = 0.0;
    std::optional<PartitionedState> sep;  // polished equilibrium for ConvergedToSEP
    std::string detail;
};

std::string to_string(Termination::Kind k);

struct TrajEvent {
    enum class Kind { Scenario, TapChange, OxlActivated, Island };
    double t = 0.0;
    Kind kind = Kind::Scenario;
    std::string description;
    std::optional<EventSpec> scenario_event;
    PartitionedState post_state;  // state right after the event was processed
};

struct Trajectory {
    std::vector<PartitionedState> samples;
    std::vector<TrajEvent> events;
    Termination termination;

    const PartitionedState& last() const { return samples.back(); }
    /// Linear interpolation of the flattened state at time t (clamped to
    /// the sampled range).
    Vec interpolate(double t) const;
};

enum class RunMode { Complete, Qss, Transient };

/// One implicit trapezoidal step of the selected model reduction.
/// Complete: (x, z_c) trapezoidal + g = 0; Qss: z_c trapezoidal + f = 0,
/// g = 0; Transient: x trapezoidal + g = 0 with z_c frozen. z_d is held
/// fixed within a step in every mode.
struct StepResult {
    bool ok = false;
    PartitionedState state;
    NewtonResult newton;
};
StepResult dae_step(const DaeSystem& model, RunMode mode, const PartitionedState& s, double h,
                    const SimConfig& cfg);

/// Re-solves the algebraic layer after a discontinuity: g = 0 for y
/// (Complete/Transient) or {f = 0, g = 0} for (x, y) (Qss).
StepResult algebraic_jump(const DaeSystem& model, RunMode mode, const PartitionedState& s,
                          const SimConfig& cfg);

struct EngineHooks {
    std::vector<EventSpec> scenario_events;  // must be sorted by time
    std::function<std::string(const EventSpec&)> apply_event;  // mutates topology
    std::function<std::vector<int>()> islanded_buses;          // after apply
};

/// Shared run loop: fixed-step integration with exact event-time splitting,
/// discrete-device firing (Complete/Qss), SEP detection, and failure
/// classification. Newton failures terminate as SingularityLikely when a
/// singular or >1e12-condition Jacobian was met, Diverged otherwise.
Trajectory run_dae(const DaeSystem& model, RunMode mode, const PartitionedState& s0, double t0,
                   double t_end, const SimConfig& cfg, EngineHooks hooks = {});

}  // namespace qssdiag
