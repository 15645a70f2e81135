#pragma once

#include "qssdiag/common.hpp"
#include "qssdiag/netmodel.hpp"

#include <memory>
#include <string>
#include <vector>

namespace qssdiag {

/// Fixed index layout of the four state partitions for one SystemSpec.
/// Built once; shared by every PartitionedState of that system.
struct StateLayout {
    std::vector<std::string> zc_names, zd_names, x_names, y_names;

    std::vector<int> gov_zc;     // per governor: index of p_m in z_c
    std::vector<int> erl_zc;     // per ERL: offset of x_p (x_q at +1)
    std::vector<int> ltc_zd;     // per LTC: index of m in z_d
    std::vector<int> oxl_zd;     // per OXL: offset of active flag (viol_start at +1)
    std::vector<int> gen_x;      // per generator: offset of delta (omega, eqp follow)
    std::vector<int> gen_efd_x;  // per generator: index of e_fd in x, -1 if no AVR

    int nzc = 0, nzd = 0, nx = 0, ny = 0;

    int bus_v(int bus) const { return 2 * bus; }
    int bus_theta(int bus) const { return 2 * bus + 1; }

    /// All variable names in CSV column order: zc, zd, x, y.
    std::vector<std::string> all_names() const;

    static std::shared_ptr<const StateLayout> build(const SystemSpec& sys);

    /// Layout with synthesized names, for non-power DAE fixtures.
    static std::shared_ptr<const StateLayout> generic(int nzc, int nzd, int nx, int ny);
};

/// One snapshot of the partitioned state (z_c, z_d, x, y) at time t.
struct PartitionedState {
    Vec z_c, z_d, x, y;
    double t = 0.0;
    std::shared_ptr<const StateLayout> layout;

    /// Flat copy in column order zc, zd, x, y.
    Vec flatten() const;
    int total_dim() const {
        return static_cast<int>(z_c.size() + z_d.size() + x.size() + y.size());
    }
};

/// Zero-valued state conforming to the layout.
PartitionedState make_state(std::shared_ptr<const StateLayout> layout);

/// Max absolute per-variable difference across all continuous partitions
/// (z_c, z_d, x, y).
double state_distance(const PartitionedState& a, const PartitionedState& b);

}  // namespace qssdiag
