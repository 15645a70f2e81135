#include "qssdiag/state.hpp"

namespace qssdiag {

std::shared_ptr<const StateLayout> StateLayout::build(const SystemSpec& sys) {
    auto lay = std::make_shared<StateLayout>();
    for (const auto& g : sys.governors) {
        lay->gov_zc.push_back(lay->nzc++);
        lay->zc_names.push_back("zc." + g.id + ".p_m");
    }
    for (const auto& e : sys.erl_loads) {
        lay->erl_zc.push_back(lay->nzc);
        lay->nzc += 2;
        lay->zc_names.push_back("zc." + e.id + ".x_p");
        lay->zc_names.push_back("zc." + e.id + ".x_q");
    }
    for (const auto& l : sys.ltcs) {
        lay->ltc_zd.push_back(lay->nzd++);
        lay->zd_names.push_back("zd." + l.id + ".m");
    }
    for (const auto& o : sys.oxls) {
        lay->oxl_zd.push_back(lay->nzd);
        lay->nzd += 2;
        lay->zd_names.push_back("zd." + o.id + ".active");
        lay->zd_names.push_back("zd." + o.id + ".viol_start");
    }
    for (size_t gi = 0; gi < sys.generators.size(); ++gi) {
        const auto& g = sys.generators[gi];
        lay->gen_x.push_back(lay->nx);
        lay->x_names.push_back("x." + g.id + ".delta");
        lay->x_names.push_back("x." + g.id + ".omega");
        lay->x_names.push_back("x." + g.id + ".eqp");
        lay->nx += 3;
        if (sys.avr_of_gen[gi] >= 0) {
            lay->gen_efd_x.push_back(lay->nx++);
            lay->x_names.push_back("x." + g.id + ".efd");
        } else {
            lay->gen_efd_x.push_back(-1);
        }
    }
    for (const auto& b : sys.buses) {
        lay->y_names.push_back("y." + b.id + ".v");
        lay->y_names.push_back("y." + b.id + ".theta");
    }
    lay->ny = 2 * sys.n_buses();
    return lay;
}

std::shared_ptr<const StateLayout> StateLayout::generic(int nzc, int nzd, int nx, int ny) {
    auto lay = std::make_shared<StateLayout>();
    lay->nzc = nzc;
    lay->nzd = nzd;
    lay->nx = nx;
    lay->ny = ny;
    for (int i = 0; i < nzc; ++i) lay->zc_names.push_back("zc.s" + std::to_string(i) + ".v");
    for (int i = 0; i < nzd; ++i) lay->zd_names.push_back("zd.s" + std::to_string(i) + ".v");
    for (int i = 0; i < nx; ++i) lay->x_names.push_back("x.s" + std::to_string(i) + ".v");
    for (int i = 0; i < ny; ++i) lay->y_names.push_back("y.s" + std::to_string(i) + ".v");
    return lay;
}

std::vector<std::string> StateLayout::all_names() const {
    std::vector<std::string> out;
    out.reserve(nzc + nzd + nx + ny);
    for (const auto& n : zc_names) out.push_back(n);
    for (const auto& n : zd_names) out.push_back(n);
    for (const auto& n : x_names) out.push_back(n);
    for (const auto& n : y_names) out.push_back(n);
    return out;
}

Vec PartitionedState::flatten() const {
    Vec out(total_dim());
    out << z_c, z_d, x, y;
    return out;
}

PartitionedState make_state(std::shared_ptr<const StateLayout> layout) {
    PartitionedState s;
    s.z_c = Vec::Zero(layout->nzc);
    s.z_d = Vec::Zero(layout->nzd);
    s.x = Vec::Zero(layout->nx);
    s.y = Vec::Zero(layout->ny);
    s.layout = std::move(layout);
    return s;
}

double state_distance(const PartitionedState& a, const PartitionedState& b) {
    double m = 0.0;
    auto upd = [&m](const Vec& u, const Vec& v) {
        if (u.size() > 0) m = std::max(m, (u - v).cwiseAbs().maxCoeff());
    };
    upd(a.z_c, b.z_c);
    upd(a.z_d, b.z_d);
    upd(a.x, b.x);
    upd(a.y, b.y);
    return m;
}

}  // namespace qssdiag
