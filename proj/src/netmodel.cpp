#include "qssdiag/netmodel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <unordered_map>

namespace qssdiag {

using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail_parse(const std::string& msg) { throw ParseError(msg); }
[[noreturn]] void fail_valid(const std::string& msg) { throw ValidationError(msg); }

double get_num(const ordered_json& j, const std::string& ctx, const std::string& key,
               std::optional<double> def = std::nullopt) {
    if (!j.contains(key)) {
        if (def) return *def;
        fail_parse(ctx + ": missing field '" + key + "'");
    }
    const auto& v = j.at(key);
    if (!v.is_number()) fail_parse(ctx + ": field '" + key + "' must be a number");
    return v.get<double>();
}

std::string get_str(const ordered_json& j, const std::string& ctx, const std::string& key) {
    if (!j.contains(key)) fail_parse(ctx + ": missing field '" + key + "'");
    const auto& v = j.at(key);
    if (!v.is_string()) fail_parse(ctx + ": field '" + key + "' must be a string");
    return v.get<std::string>();
}

std::optional<double> get_opt_num(const ordered_json& j, const std::string& ctx, const std::string& key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_number()) fail_parse(ctx + ": field '" + key + "' must be a number or null");
    return j.at(key).get<double>();
}

const ordered_json kEmptyArray = ordered_json::array();

const ordered_json& get_array(const ordered_json& j, const std::string& key, bool required = false) {
    if (!j.contains(key)) {
        if (required) fail_parse("system: missing field '" + key + "'");
        return kEmptyArray;
    }
    if (!j.at(key).is_array()) fail_parse("system: field '" + key + "' must be an array");
    return j.at(key);
}

template <typename T>
int index_of_id(const std::vector<T>& items, const std::string& id) {
    for (size_t i = 0; i < items.size(); ++i)
        if (items[i].id == id) return static_cast<int>(i);
    return -1;
}

}  // namespace

int SystemSpec::bus_index(const std::string& id) const { return index_of_id(buses, id); }
int SystemSpec::branch_index(const std::string& id) const { return index_of_id(branches, id); }

bool SystemSpec::operator==(const SystemSpec& o) const {
    return schema == o.schema && base_mva == o.base_mva && buses == o.buses &&
           branches == o.branches && generators == o.generators && avrs == o.avrs &&
           governors == o.governors && oxls == o.oxls && erl_loads == o.erl_loads &&
           ltcs == o.ltcs && static_loads == o.static_loads && calibration == o.calibration;
}

namespace {

void validate_system(SystemSpec& sys) {
    std::unordered_map<std::string, int> bus_ids;
    for (size_t i = 0; i < sys.buses.size(); ++i) {
        const auto& b = sys.buses[i];
        if (b.id.empty()) fail_valid("bus: id must be non-empty");
        if (!bus_ids.emplace(b.id, i).second) fail_valid("duplicate bus id '" + b.id + "'");
        if (!(b.base_kv > 0)) fail_valid("BusSpec.base_kV must be > 0 (bus '" + b.id + "')");
        if (b.kind != BusKind::PQ) {
            if (!b.v_set) fail_valid("bus '" + b.id + "': v_set required for slack/pv buses");
            if (!(*b.v_set > 0.5 && *b.v_set < 1.5))
                fail_valid("BusSpec.V_set must lie in (0.5, 1.5) (bus '" + b.id + "')");
        }
    }

    std::unordered_map<std::string, int> branch_ids;
    for (size_t i = 0; i < sys.branches.size(); ++i) {
        auto& br = sys.branches[i];
        if (!branch_ids.emplace(br.id, i).second) fail_valid("duplicate branch id '" + br.id + "'");
        br.from_idx = sys.bus_index(br.from);
        br.to_idx = sys.bus_index(br.to);
        if (br.from_idx < 0) fail_valid("branch '" + br.id + "': unknown bus id '" + br.from + "'");
        if (br.to_idx < 0) fail_valid("branch '" + br.id + "': unknown bus id '" + br.to + "'");
        if (br.from_idx == br.to_idx) fail_valid("branch '" + br.id + "': from and to must differ");
        if (br.r == 0.0 && br.x == 0.0) fail_valid("branch '" + br.id + "': r and x cannot both be zero");
        if (br.tap_side) {
            if (*br.tap_side != br.from && *br.tap_side != br.to)
                fail_valid("branch '" + br.id + "': tap_side must name its from or to bus");
        }
    }

    int n_slack = 0;
    for (const auto& b : sys.buses) n_slack += (b.kind == BusKind::Slack) ? 1 : 0;
    if (n_slack != 1) fail_valid("exactly one slack bus is required, found " + std::to_string(n_slack));
    for (size_t i = 0; i < sys.buses.size(); ++i)
        if (sys.buses[i].kind == BusKind::Slack) sys.slack_bus = static_cast<int>(i);

    // one slack per island, checked on the base (closed-branch) topology
    {
        std::vector<int> comp(sys.buses.size(), -1);
        int n_comp = 0;
        for (size_t s = 0; s < sys.buses.size(); ++s) {
            if (comp[s] >= 0) continue;
            std::queue<int> q;
            q.push(static_cast<int>(s));
            comp[s] = n_comp;
            while (!q.empty()) {
                int u = q.front();
                q.pop();
                for (const auto& br : sys.branches) {
                    if (br.status != BranchStatus::Closed) continue;
                    int v = -1;
                    if (br.from_idx == u) v = br.to_idx;
                    else if (br.to_idx == u) v = br.from_idx;
                    if (v >= 0 && comp[v] < 0) {
                        comp[v] = n_comp;
                        q.push(v);
                    }
                }
            }
            ++n_comp;
        }
        std::vector<int> slack_per_comp(n_comp, 0);
        for (size_t i = 0; i < sys.buses.size(); ++i)
            if (sys.buses[i].kind == BusKind::Slack) slack_per_comp[comp[i]]++;
        for (int c = 0; c < n_comp; ++c)
            if (slack_per_comp[c] != 1)
                fail_valid("every island must contain exactly one slack bus");
    }

    std::vector<int> gen_at_bus(sys.buses.size(), -1);
    std::unordered_map<std::string, int> gen_ids;
    for (size_t i = 0; i < sys.generators.size(); ++i) {
        auto& g = sys.generators[i];
        if (!gen_ids.emplace(g.id, i).second) fail_valid("duplicate generator id '" + g.id + "'");
        g.bus_idx = sys.bus_index(g.bus);
        if (g.bus_idx < 0) fail_valid("generator '" + g.id + "': unknown bus id '" + g.bus + "'");
        if (sys.buses[g.bus_idx].kind == BusKind::Slack)
            fail_valid("generator '" + g.id + "': generators at the slack bus are not supported");
        if (sys.buses[g.bus_idx].kind != BusKind::PV)
            fail_valid("generator '" + g.id + "': generator buses must be PV");
        if (gen_at_bus[g.bus_idx] >= 0)
            fail_valid("bus '" + g.bus + "': at most one generator per bus");
        gen_at_bus[g.bus_idx] = static_cast<int>(i);
        if (!(g.h > 0)) fail_valid("GenParams.H must be > 0 (generator '" + g.id + "')");
        if (!(g.t_d0_prime > 0)) fail_valid("GenParams.T_d0_prime must be > 0 (generator '" + g.id + "')");
        if (!(g.x_d_prime > 0)) fail_valid("GenParams.X_d_prime must be > 0 (generator '" + g.id + "')");
        if (!(g.omega_s > 0)) fail_valid("GenParams.omega_s must be > 0 (generator '" + g.id + "')");
        if (g.d < 0) fail_valid("GenParams.D must be >= 0 (generator '" + g.id + "')");
    }

    sys.avr_of_gen.assign(sys.generators.size(), -1);
    for (size_t i = 0; i < sys.avrs.size(); ++i) {
        auto& a = sys.avrs[i];
        a.gen_idx = index_of_id(sys.generators, a.gen);
        if (a.gen_idx < 0) fail_valid("avr '" + a.id + "': unknown generator id '" + a.gen + "'");
        if (sys.avr_of_gen[a.gen_idx] >= 0)
            fail_valid("generator '" + a.gen + "': at most one AVR per generator");
        sys.avr_of_gen[a.gen_idx] = static_cast<int>(i);
        if (!(a.t_e > 0)) fail_valid("AvrParams.T_e must be > 0 (avr '" + a.id + "')");
        if (!(a.k_a > 0)) fail_valid("AvrParams.K_a must be > 0 (avr '" + a.id + "')");
        if (!(a.e_fd_min < a.e_fd_max))
            fail_valid("AvrParams.E_fd_min must be < E_fd_max (avr '" + a.id + "')");
    }

    sys.gov_of_gen.assign(sys.generators.size(), -1);
    for (size_t i = 0; i < sys.governors.size(); ++i) {
        auto& g = sys.governors[i];
        g.gen_idx = index_of_id(sys.generators, g.gen);
        if (g.gen_idx < 0) fail_valid("governor '" + g.id + "': unknown generator id '" + g.gen + "'");
        if (sys.gov_of_gen[g.gen_idx] >= 0)
            fail_valid("generator '" + g.gen + "': at most one governor per generator");
        sys.gov_of_gen[g.gen_idx] = static_cast<int>(i);
        if (!(g.t_g > 0)) fail_valid("GovParams.T_g must be > 0 (governor '" + g.id + "')");
    }

    sys.oxl_of_gen.assign(sys.generators.size(), -1);
    for (size_t i = 0; i < sys.oxls.size(); ++i) {
        auto& o = sys.oxls[i];
        o.gen_idx = index_of_id(sys.generators, o.gen);
        if (o.gen_idx < 0) fail_valid("oxl '" + o.id + "': unknown generator id '" + o.gen + "'");
        if (sys.oxl_of_gen[o.gen_idx] >= 0)
            fail_valid("generator '" + o.gen + "': at most one OXL per generator");
        if (sys.avr_of_gen[o.gen_idx] < 0)
            fail_valid("oxl '" + o.id + "': generator has no AVR to limit");
        sys.oxl_of_gen[o.gen_idx] = static_cast<int>(i);
        if (o.delay_s < 0) fail_valid("OxlParams.delay_s must be >= 0 (oxl '" + o.id + "')");
    }

    for (auto& e : sys.erl_loads) {
        e.bus_idx = sys.bus_index(e.bus);
        if (e.bus_idx < 0) fail_valid("erl_load '" + e.id + "': unknown bus id '" + e.bus + "'");
        if (!(e.t_p > 0)) fail_valid("ErlParams.T_p must be > 0 (erl_load '" + e.id + "')");
        if (!(e.t_q > 0)) fail_valid("ErlParams.T_q must be > 0 (erl_load '" + e.id + "')");
        if (!(e.v0 > 0)) fail_valid("ErlParams.V0 must be > 0 (erl_load '" + e.id + "')");
    }

    sys.ltc_of_branch.assign(sys.branches.size(), -1);
    for (size_t i = 0; i < sys.ltcs.size(); ++i) {
        auto& l = sys.ltcs[i];
        l.branch_idx = sys.branch_index(l.branch);
        if (l.branch_idx < 0) fail_valid("LtcParams.branch: unknown branch id '" + l.branch + "'");
        l.controlled_bus_idx = sys.bus_index(l.controlled_bus);
        if (l.controlled_bus_idx < 0)
            fail_valid("LtcParams.controlled_bus: unknown bus id '" + l.controlled_bus + "'");
        if (sys.ltc_of_branch[l.branch_idx] >= 0)
            fail_valid("branch '" + l.branch + "': at most one LTC per branch");
        sys.ltc_of_branch[l.branch_idx] = static_cast<int>(i);
        if (!sys.branches[l.branch_idx].tap_side)
            fail_valid("ltc '" + l.id + "': branch '" + l.branch + "' must declare tap_side");
        if (!(l.delta_m > 0)) fail_valid("LtcParams.delta_m must be > 0 (ltc '" + l.id + "')");
        if (!(l.deadband > 0)) fail_valid("LtcParams.deadband must be > 0 (ltc '" + l.id + "')");
        if (!(l.period_s > 0)) fail_valid("LtcParams.period_s must be > 0 (ltc '" + l.id + "')");
        if (!(l.m_min <= l.m0 && l.m0 <= l.m_max))
            fail_valid("LtcParams.m0 must lie in [m_min, m_max] (ltc '" + l.id + "')");
    }

    for (auto& s : sys.static_loads) {
        s.bus_idx = sys.bus_index(s.bus);
        if (s.bus_idx < 0) fail_valid("static_load '" + s.id + "': unknown bus id '" + s.bus + "'");
    }
}

BusKind parse_bus_kind(const std::string& s, const std::string& ctx) {
    if (s == "slack") return BusKind::Slack;
    if (s == "pv") return BusKind::PV;
    if (s == "pq") return BusKind::PQ;
    fail_parse(ctx + ": kind must be one of slack|pv|pq, got '" + s + "'");
}

}  // namespace

SystemSpec parse_system(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail_parse(std::string("syntax error: ") + e.what());
    }
    if (!j.is_object()) fail_parse("system: top level must be an object");
    SystemSpec sys;
    if (!j.contains("schema") || !j.at("schema").is_number_integer())
        fail_parse("system: missing integer field 'schema'");
    sys.schema = j.at("schema").get<int>();
    if (sys.schema != 1) fail_parse("system: unsupported schema version " + std::to_string(sys.schema));
    sys.base_mva = get_num(j, "system", "base_mva", 100.0);

    for (const auto& bj : get_array(j, "buses", true)) {
        BusSpec b;
        b.id = get_str(bj, "bus", "id");
        const std::string ctx = "bus '" + b.id + "'";
        b.base_kv = get_num(bj, ctx, "base_kv");
        b.kind = parse_bus_kind(get_str(bj, ctx, "kind"), ctx);
        b.v_set = get_opt_num(bj, ctx, "v_set");
        b.p_load = get_num(bj, ctx, "p_load", 0.0);
        b.q_load = get_num(bj, ctx, "q_load", 0.0);
        sys.buses.push_back(std::move(b));
    }
    for (const auto& bj : get_array(j, "branches")) {
        BranchSpec br;
        br.id = get_str(bj, "branch", "id");
        const std::string ctx = "branch '" + br.id + "'";
        br.from = get_str(bj, ctx, "from");
        br.to = get_str(bj, ctx, "to");
        br.r = get_num(bj, ctx, "r", 0.0);
        br.x = get_num(bj, ctx, "x");
        br.b_shunt = get_num(bj, ctx, "b_shunt", 0.0);
        if (bj.contains("tap_side") && !bj.at("tap_side").is_null())
            br.tap_side = get_str(bj, ctx, "tap_side");
        if (bj.contains("status")) {
            const std::string s = get_str(bj, ctx, "status");
            if (s == "closed") br.status = BranchStatus::Closed;
            else if (s == "open") br.status = BranchStatus::Open;
            else fail_parse(ctx + ": status must be closed|open");
        }
        sys.branches.push_back(std::move(br));
    }
    for (const auto& gj : get_array(j, "generators")) {
        GenParams g;
        g.id = get_str(gj, "generator", "id");
        const std::string ctx = "generator '" + g.id + "'";
        g.bus = get_str(gj, ctx, "bus");
        g.h = get_num(gj, ctx, "h");
        g.d = get_num(gj, ctx, "d", 0.0);
        g.x_d = get_num(gj, ctx, "x_d");
        g.x_d_prime = get_num(gj, ctx, "x_d_prime");
        g.t_d0_prime = get_num(gj, ctx, "t_d0_prime");
        g.omega_s = get_num(gj, ctx, "omega_s", 2.0 * M_PI * 60.0);
        g.p_set = get_num(gj, ctx, "p_set", 0.0);
        sys.generators.push_back(std::move(g));
    }
    for (const auto& aj : get_array(j, "avrs")) {
        AvrParams a;
        a.id = get_str(aj, "avr", "id");
        const std::string ctx = "avr '" + a.id + "'";
        a.gen = get_str(aj, ctx, "gen");
        a.k_a = get_num(aj, ctx, "k_a");
        a.t_e = get_num(aj, ctx, "t_e");
        a.v_ref = get_opt_num(aj, ctx, "v_ref");
        a.e_fd_min = get_num(aj, ctx, "e_fd_min");
        a.e_fd_max = get_num(aj, ctx, "e_fd_max");
        sys.avrs.push_back(std::move(a));
    }
    for (const auto& gj : get_array(j, "governors")) {
        GovParams g;
        g.id = get_str(gj, "governor", "id");
        const std::string ctx = "governor '" + g.id + "'";
        g.gen = get_str(gj, ctx, "gen");
        g.t_g = get_num(gj, ctx, "t_g");
        g.k_g = get_num(gj, ctx, "k_g");
        g.p_m0 = get_num(gj, ctx, "p_m0");
        sys.governors.push_back(std::move(g));
    }
    for (const auto& oj : get_array(j, "oxls")) {
        OxlParams o;
        o.id = get_str(oj, "oxl", "id");
        const std::string ctx = "oxl '" + o.id + "'";
        o.gen = get_str(oj, ctx, "gen");
        o.e_fd_limit = get_num(oj, ctx, "e_fd_limit");
        o.delay_s = get_num(oj, ctx, "delay_s");
        sys.oxls.push_back(std::move(o));
    }
    for (const auto& ej : get_array(j, "erl_loads")) {
        ErlParams e;
        e.id = get_str(ej, "erl_load", "id");
        const std::string ctx = "erl_load '" + e.id + "'";
        e.bus = get_str(ej, ctx, "bus");
        e.p0 = get_num(ej, ctx, "p0");
        e.q0 = get_num(ej, ctx, "q0", 0.0);
        e.v0 = get_num(ej, ctx, "v0", 1.0);
        e.alpha_s = get_num(ej, ctx, "alpha_s");
        e.alpha_t = get_num(ej, ctx, "alpha_t");
        e.beta_s = get_num(ej, ctx, "beta_s", e.alpha_s);
        e.beta_t = get_num(ej, ctx, "beta_t", e.alpha_t);
        e.t_p = get_num(ej, ctx, "t_p");
        e.t_q = get_num(ej, ctx, "t_q", e.t_p);
        sys.erl_loads.push_back(std::move(e));
    }
    for (const auto& lj : get_array(j, "ltcs")) {
        LtcParams l;
        l.id = get_str(lj, "ltc", "id");
        const std::string ctx = "ltc '" + l.id + "'";
        l.branch = get_str(lj, ctx, "branch");
        l.controlled_bus = get_str(lj, ctx, "controlled_bus");
        l.m0 = get_num(lj, ctx, "m0", 1.0);
        l.delta_m = get_num(lj, ctx, "delta_m");
        l.m_min = get_num(lj, ctx, "m_min");
        l.m_max = get_num(lj, ctx, "m_max");
        l.v_ref = get_num(lj, ctx, "v_ref");
        l.deadband = get_num(lj, ctx, "deadband");
        l.period_s = get_num(lj, ctx, "period_s");
        sys.ltcs.push_back(std::move(l));
    }
    for (const auto& sj : get_array(j, "static_loads")) {
        StaticLoadSpec s;
        s.id = get_str(sj, "static_load", "id");
        const std::string ctx = "static_load '" + s.id + "'";
        s.bus = get_str(sj, ctx, "bus");
        s.p = get_num(sj, ctx, "p", 0.0);
        s.q = get_num(sj, ctx, "q", 0.0);
        sys.static_loads.push_back(std::move(s));
    }

    validate_system(sys);
    return sys;
}

namespace {

ordered_json opt_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}

}  // namespace

std::string serialize_system(const SystemSpec& sys) {
    ordered_json j;
    j["schema"] = sys.schema;
    j["base_mva"] = sys.base_mva;
    j["buses"] = ordered_json::array();
    for (const auto& b : sys.buses) {
        const char* kind = b.kind == BusKind::Slack ? "slack" : (b.kind == BusKind::PV ? "pv" : "pq");
        j["buses"].push_back({{"id", b.id},
                              {"base_kv", b.base_kv},
                              {"kind", kind},
                              {"v_set", opt_json(b.v_set)},
                              {"p_load", b.p_load},
                              {"q_load", b.q_load}});
    }
    j["branches"] = ordered_json::array();
    for (const auto& br : sys.branches) {
        ordered_json tj = nullptr;
        if (br.tap_side) tj = *br.tap_side;
        j["branches"].push_back({{"id", br.id},
                                 {"from", br.from},
                                 {"to", br.to},
                                 {"r", br.r},
                                 {"x", br.x},
                                 {"b_shunt", br.b_shunt},
                                 {"tap_side", tj},
                                 {"status", br.status == BranchStatus::Closed ? "closed" : "open"}});
    }
    j["generators"] = ordered_json::array();
    for (const auto& g : sys.generators)
        j["generators"].push_back({{"id", g.id},
                                   {"bus", g.bus},
                                   {"h", g.h},
                                   {"d", g.d},
                                   {"x_d", g.x_d},
                                   {"x_d_prime", g.x_d_prime},
                                   {"t_d0_prime", g.t_d0_prime},
                                   {"omega_s", g.omega_s},
                                   {"p_set", g.p_set}});
    j["avrs"] = ordered_json::array();
    for (const auto& a : sys.avrs)
        j["avrs"].push_back({{"id", a.id},
                             {"gen", a.gen},
                             {"k_a", a.k_a},
                             {"t_e", a.t_e},
                             {"v_ref", opt_json(a.v_ref)},
                             {"e_fd_min", a.e_fd_min},
                             {"e_fd_max", a.e_fd_max}});
    j["governors"] = ordered_json::array();
    for (const auto& g : sys.governors)
        j["governors"].push_back(
            {{"id", g.id}, {"gen", g.gen}, {"t_g", g.t_g}, {"k_g", g.k_g}, {"p_m0", g.p_m0}});
    j["oxls"] = ordered_json::array();
    for (const auto& o : sys.oxls)
        j["oxls"].push_back(
            {{"id", o.id}, {"gen", o.gen}, {"e_fd_limit", o.e_fd_limit}, {"delay_s", o.delay_s}});
    j["erl_loads"] = ordered_json::array();
    for (const auto& e : sys.erl_loads)
        j["erl_loads"].push_back({{"id", e.id},
                                  {"bus", e.bus},
                                  {"p0", e.p0},
                                  {"q0", e.q0},
                                  {"v0", e.v0},
                                  {"alpha_s", e.alpha_s},
                                  {"alpha_t", e.alpha_t},
                                  {"beta_s", e.beta_s},
                                  {"beta_t", e.beta_t},
                                  {"t_p", e.t_p},
                                  {"t_q", e.t_q}});
    j["ltcs"] = ordered_json::array();
    for (const auto& l : sys.ltcs)
        j["ltcs"].push_back({{"id", l.id},
                             {"branch", l.branch},
                             {"controlled_bus", l.controlled_bus},
                             {"m0", l.m0},
                             {"delta_m", l.delta_m},
                             {"m_min", l.m_min},
                             {"m_max", l.m_max},
                             {"v_ref", l.v_ref},
                             {"deadband", l.deadband},
                             {"period_s", l.period_s}});
    j["static_loads"] = ordered_json::array();
    for (const auto& s : sys.static_loads)
        j["static_loads"].push_back({{"id", s.id}, {"bus", s.bus}, {"p", s.p}, {"q", s.q}});
    return j.dump(2);
}

ScenarioSpec parse_scenario(const std::string& text, const SystemSpec& sys) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail_parse(std::string("syntax error: ") + e.what());
    }
    if (!j.is_object()) fail_parse("scenario: top level must be an object");
    ScenarioSpec sc;
    sc.t_end = get_num(j, "scenario", "t_end");
    if (!(sc.t_end > 0)) fail_valid("scenario: t_end must be > 0");
    sc.qss_start = get_opt_num(j, "scenario", "qss_start");
    if (sc.qss_start && (*sc.qss_start < 0 || *sc.qss_start > sc.t_end))
        fail_valid("scenario: qss_start must lie in [0, t_end]");

    double prev_t = -1.0;
    std::map<std::string, bool> fault_active;
    for (const auto& ej : get_array(j, "events")) {
        EventSpec ev;
        ev.time = get_num(ej, "event", "time");
        const std::string kind = get_str(ej, "event", "kind");
        const std::string ctx = "event at t=" + std::to_string(ev.time);
        if (!(ev.time > 0 && ev.time < sc.t_end))
            fail_valid(ctx + ": event times must lie strictly within (0, t_end)");
        if (ev.time < prev_t) fail_valid("scenario: events must be ordered by time");
        prev_t = ev.time;
        if (kind == "apply_fault") {
            ev.kind = EventSpec::Kind::ApplyFault;
            ev.target = get_str(ej, ctx, "bus");
            ev.admittance = get_num(ej, ctx, "admittance", 1e4);
            ev.target_idx = sys.bus_index(ev.target);
            if (ev.target_idx < 0) fail_valid(ctx + ": unknown bus id '" + ev.target + "'");
            fault_active[ev.target] = true;
        } else if (kind == "clear_fault") {
            ev.kind = EventSpec::Kind::ClearFault;
            ev.target = get_str(ej, ctx, "bus");
            ev.target_idx = sys.bus_index(ev.target);
            if (ev.target_idx < 0) fail_valid(ctx + ": unknown bus id '" + ev.target + "'");
            if (!fault_active[ev.target])
                fail_valid(ctx + ": clear_fault without a prior apply_fault at bus '" + ev.target + "'");
            fault_active[ev.target] = false;
        } else if (kind == "open_branch" || kind == "close_branch") {
            ev.kind = kind == "open_branch" ? EventSpec::Kind::OpenBranch : EventSpec::Kind::CloseBranch;
            ev.target = get_str(ej, ctx, "branch");
            ev.target_idx = sys.branch_index(ev.target);
            if (ev.target_idx < 0) fail_valid(ctx + ": unknown branch id '" + ev.target + "'");
        } else {
            fail_parse(ctx + ": unknown event kind '" + kind + "'");
        }
        sc.events.push_back(std::move(ev));
    }
    return sc;
}

std::string serialize_scenario(const ScenarioSpec& sc) {
    ordered_json j;
    j["t_end"] = sc.t_end;
    j["qss_start"] = opt_json(sc.qss_start);
    j["events"] = ordered_json::array();
    for (const auto& ev : sc.events) {
        ordered_json e;
        e["time"] = ev.time;
        switch (ev.kind) {
            case EventSpec::Kind::ApplyFault:
                e["kind"] = "apply_fault";
                e["bus"] = ev.target;
                e["admittance"] = ev.admittance;
                break;
            case EventSpec::Kind::ClearFault:
                e["kind"] = "clear_fault";
                e["bus"] = ev.target;
                break;
            case EventSpec::Kind::OpenBranch:
                e["kind"] = "open_branch";
                e["branch"] = ev.target;
                break;
            case EventSpec::Kind::CloseBranch:
                e["kind"] = "close_branch";
                e["branch"] = ev.target;
                break;
        }
        j["events"].push_back(std::move(e));
    }
    return j.dump(2);
}

BranchStatus TopologyOverlay::effective_status(const SystemSpec& sys, int branch_idx) const {
    auto it = branch_status.find(branch_idx);
    if (it != branch_status.end()) return it->second;
    return sys.branches[branch_idx].status;
}

std::vector<int> disconnected_from_slack(const SystemSpec& sys, const TopologyOverlay& overlay) {
    std::vector<bool> seen(sys.buses.size(), false);
    std::queue<int> q;
    q.push(sys.slack_bus);
    seen[sys.slack_bus] = true;
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (size_t bi = 0; bi < sys.branches.size(); ++bi) {
            if (overlay.effective_status(sys, static_cast<int>(bi)) != BranchStatus::Closed) continue;
            const auto& br = sys.branches[bi];
            int v = -1;
            if (br.from_idx == u) v = br.to_idx;
            else if (br.to_idx == u) v = br.from_idx;
            if (v >= 0 && !seen[v]) {
                seen[v] = true;
                q.push(v);
            }
        }
    }
    std::vector<int> out;
    for (size_t i = 0; i < sys.buses.size(); ++i)
        if (!seen[i]) out.push_back(static_cast<int>(i));
    return out;
}

TopologyOverlay apply_event(const SystemSpec& sys, TopologyOverlay overlay, const EventSpec& ev) {
    switch (ev.kind) {
        case EventSpec::Kind::ApplyFault:
            overlay.fault_admittance[ev.target_idx] = ev.admittance;
            break;
        case EventSpec::Kind::ClearFault: {
            auto it = overlay.fault_admittance.find(ev.target_idx);
            if (it == overlay.fault_admittance.end())
                throw Error("clear_fault: no active fault at bus '" + ev.target + "'");
            overlay.fault_admittance.erase(it);
            break;
        }
        case EventSpec::Kind::OpenBranch:
            overlay.branch_status[ev.target_idx] = BranchStatus::Open;
            break;
        case EventSpec::Kind::CloseBranch:
            overlay.branch_status[ev.target_idx] = BranchStatus::Closed;
            break;
    }
    // drop overrides that restate the base spec so inverse event pairs
    // restore the original overlay exactly
    for (auto it = overlay.branch_status.begin(); it != overlay.branch_status.end();) {
        if (sys.branches[it->first].status == it->second) it = overlay.branch_status.erase(it);
        else ++it;
    }
    overlay.topology_version++;
    overlay.disconnected_buses = disconnected_from_slack(sys, overlay);
    return overlay;
}

AdmittanceMatrix build_admittance(const SystemSpec& sys, const std::vector<double>& taps,
                                  const TopologyOverlay& overlay) {
    if (taps.size() != sys.ltcs.size())
        throw Error("build_admittance: expected " + std::to_string(sys.ltcs.size()) +
                    " tap ratios, got " + std::to_string(taps.size()));
    const int n = sys.n_buses();
    AdmittanceMatrix out;
    out.y = CMat::Zero(n, n);
    out.topology_version = overlay.topology_version;

    for (size_t bi = 0; bi < sys.branches.size(); ++bi) {
        if (overlay.effective_status(sys, static_cast<int>(bi)) != BranchStatus::Closed) continue;
        const auto& br = sys.branches[bi];
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex ysh(0.0, br.b_shunt / 2.0);
        double m = 1.0;
        bool tap_on_from = true;
        if (sys.ltc_of_branch[bi] >= 0) {
            m = taps[sys.ltc_of_branch[bi]];
            tap_on_from = (*br.tap_side == br.from);
        }
        const int f = br.from_idx, t = br.to_idx;
        if (m == 1.0) {
            out.y(f, f) += ys + ysh;
            out.y(t, t) += ys + ysh;
            out.y(f, t) -= ys;
            out.y(t, f) -= ys;
        } else if (tap_on_from) {
            out.y(f, f) += (ys + ysh) / (m * m);
            out.y(t, t) += ys + ysh;
            out.y(f, t) -= ys / m;
            out.y(t, f) -= ys / m;
        } else {
            out.y(t, t) += (ys + ysh) / (m * m);
            out.y(f, f) += ys + ysh;
            out.y(f, t) -= ys / m;
            out.y(t, f) -= ys / m;
        }
    }
    if (sys.calibration) {
        for (int b = 0; b < n; ++b) out.y(b, b) += sys.calibration->load_shunt[b];
    }
    for (const auto& [bus, g] : overlay.fault_admittance) out.y(bus, bus) += Complex(g, 0.0);
    return out;
}

}  // namespace qssdiag
