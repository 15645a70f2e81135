#pragma once

#include "qssdiag/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qssdiag {

enum class BusKind { Slack, PV, PQ };
enum class BranchStatus { Closed, Open };

struct BusSpec {
    std::string id;
    double base_kv = 0.0;
    BusKind kind = BusKind::PQ;
    std::optional<double> v_set;  // required for Slack/PV
    double p_load = 0.0;          // converted to constant impedance at init
    double q_load = 0.0;
    bool operator==(const BusSpec&) const = default;
};

struct BranchSpec {
    std::string id;
    std::string from;
    std::string to;
    double r = 0.0;
    double x = 0.0;
    double b_shunt = 0.0;                // total line charging, half per end
    std::optional<std::string> tap_side; // bus carrying the off-nominal tap
    BranchStatus status = BranchStatus::Closed;
    int from_idx = -1;
    int to_idx = -1;
    bool operator==(const BranchSpec&) const = default;
};

struct LtcParams {
    std::string id;
    std::string branch;
    std::string controlled_bus;
    double m0 = 1.0;
    double delta_m = 0.0;
    double m_min = 0.0;
    double m_max = 0.0;
    double v_ref = 1.0;    // deadband centre v0
    double deadband = 0.0; // d
    double period_s = 0.0; // sampling period
    int branch_idx = -1;
    int controlled_bus_idx = -1;
    bool operator==(const LtcParams&) const = default;
};

struct GenParams {
    std::string id;
    std::string bus;
    double h = 0.0;          // inertia constant, s
    double d = 0.0;          // damping, pu torque / pu speed
    double x_d = 0.0;        // synchronous reactance
    double x_d_prime = 0.0;  // transient reactance
    double t_d0_prime = 0.0; // open-circuit field time constant
    double omega_s = 0.0;    // synchronous speed, rad/s
    double p_set = 0.0;      // scheduled active power for PV dispatch
    int bus_idx = -1;
    bool operator==(const GenParams&) const = default;
};

struct AvrParams {
    std::string id;
    std::string gen;
    double k_a = 0.0;
    double t_e = 0.0;
    std::optional<double> v_ref; // recalibrated at initialization
    double e_fd_min = 0.0;
    double e_fd_max = 0.0;
    int gen_idx = -1;
    bool operator==(const AvrParams&) const = default;
};

struct GovParams {
    std::string id;
    std::string gen;
    double t_g = 0.0;
    double k_g = 0.0;
    double p_m0 = 0.0; // recalibrated at initialization
    int gen_idx = -1;
    bool operator==(const GovParams&) const = default;
};

struct OxlParams {
    std::string id;
    std::string gen;
    double e_fd_limit = 0.0;
    double delay_s = 0.0;
    int gen_idx = -1;
    bool operator==(const OxlParams&) const = default;
};

/// Exponential-recovery load (Karlsson-Hill form).
struct ErlParams {
    std::string id;
    std::string bus;
    double p0 = 0.0, q0 = 0.0;
    double v0 = 1.0;
    double alpha_s = 0.0, alpha_t = 0.0; // steady-state / transient P exponents
    double beta_s = 0.0, beta_t = 0.0;   // same for Q
    double t_p = 0.0, t_q = 0.0;
    int bus_idx = -1;
    bool operator==(const ErlParams&) const = default;
};

struct StaticLoadSpec {
    std::string id;
    std::string bus;
    double p = 0.0, q = 0.0;
    int bus_idx = -1;
    bool operator==(const StaticLoadSpec&) const = default;
};

/// Values derived once by initialize_equilibrium. The parsed spec carries
/// none; simulation requires a calibrated copy.
struct Calibration {
    std::vector<Complex> load_shunt;     // per bus, constant-impedance loads
    std::vector<double> avr_v_ref;       // per AVR
    std::vector<double> gov_p_m0;        // per governor
    std::vector<double> gen_p_m_fixed;   // per generator without governor
    std::vector<double> gen_e_fd_fixed;  // per generator without AVR
    bool operator==(const Calibration&) const = default;
};

struct SystemSpec {
    int schema = 1;
    double base_mva = 100.0;
    std::vector<BusSpec> buses;
    std::vector<BranchSpec> branches;
    std::vector<GenParams> generators;
    std::vector<AvrParams> avrs;
    std::vector<GovParams> governors;
    std::vector<OxlParams> oxls;
    std::vector<ErlParams> erl_loads;
    std::vector<LtcParams> ltcs;
    std::vector<StaticLoadSpec> static_loads;

    std::optional<Calibration> calibration;

    // Resolved cross-reference tables (built at parse).
    std::vector<int> avr_of_gen;  // per gen, -1 if none
    std::vector<int> gov_of_gen;
    std::vector<int> oxl_of_gen;
    std::vector<int> ltc_of_branch;
    int slack_bus = -1;

    int n_buses() const { return static_cast<int>(buses.size()); }
    int bus_index(const std::string& id) const;       // -1 if unknown
    int branch_index(const std::string& id) const;

    bool operator==(const SystemSpec&) const;
};

struct EventSpec {
    enum class Kind { ApplyFault, ClearFault, OpenBranch, CloseBranch };
    double time = 0.0;
    Kind kind = Kind::ApplyFault;
    std::string target;        // bus id for faults, branch id otherwise
    double admittance = 1e4;   // fault shunt conductance, pu
    int target_idx = -1;
    bool operator==(const EventSpec&) const = default;
};

struct ScenarioSpec {
    double t_end = 0.0;
    std::optional<double> qss_start;
    std::vector<EventSpec> events;
    bool operator==(const ScenarioSpec&) const = default;
};

SystemSpec parse_system(const std::string& text);
std::string serialize_system(const SystemSpec& sys);

ScenarioSpec parse_scenario(const std::string& text, const SystemSpec& sys);
std::string serialize_scenario(const ScenarioSpec& sc);

/// Mutable topology state accumulated from scenario events.
struct TopologyOverlay {
    std::map<int, double> fault_admittance;        // bus idx -> shunt conductance
    std::map<int, BranchStatus> branch_status;     // branch idx -> override
    long topology_version = 0;
    std::vector<int> disconnected_buses;           // flagged by the island check

    BranchStatus effective_status(const SystemSpec& sys, int branch_idx) const;
    bool operator==(const TopologyOverlay& o) const {
        return fault_admittance == o.fault_admittance && branch_status == o.branch_status;
    }
};

/// Applies one event and re-runs the island check. Throws Error when
/// clearing a fault that is not active.
TopologyOverlay apply_event(const SystemSpec& sys, TopologyOverlay overlay, const EventSpec& ev);

struct AdmittanceMatrix {
    CMat y;
    long topology_version = 0;
};

/// Standard Y-bus stamping; LTC branches use the off-nominal ratio from
/// `taps` (one entry per LTC, in spec order) on their tap_side; faults and
/// branch status come from the overlay; calibrated constant-impedance loads
/// are included when present.
AdmittanceMatrix build_admittance(const SystemSpec& sys, const std::vector<double>& taps,
                                  const TopologyOverlay& overlay = {});

/// Buses unreachable from the slack bus over closed branches.
std::vector<int> disconnected_from_slack(const SystemSpec& sys, const TopologyOverlay& overlay);

}  // namespace qssdiag
