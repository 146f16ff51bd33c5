#pragma once

#include <Eigen/Dense>
#include <vector>

#include "windgrid/case.hpp"
#include "windgrid/common.hpp"

namespace windgrid {

/// Extra shunt admittance at a bus (bolted faults are stamped this way).
struct ShuntPatch {
    int bus_index = 0;
    Complex y;
};

/// Dense bus admittance matrix from the effective branch set.
///
/// Branches use the pi model with the off-nominal tap on the from side:
///   Y_ff += (y + jb/2)/tap^2,  Y_ft = Y_tf -= y/tap,  Y_tt += y + jb/2.
/// Offline branches contribute nothing. `branches` carries the current taps
/// and statuses, which the discrete layer owns during simulation.
[[nodiscard]] inline Eigen::MatrixXcd
build_admittance(const PowerSystemCase& cs, const std::vector<Branch>& branches,
                 const std::vector<ShuntPatch>& patches = {}) {
    const int n = static_cast<int>(cs.buses.size());
    Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
    for (const Branch& br : branches) {
        if (!br.online) continue;
        const int f = cs.bus_index(br.from);
        const int t = cs.bus_index(br.to);
        const Complex y = Real(1) / Complex(br.r, br.x);
        const Complex ysh(0.0, br.b / 2.0);
        const Real a = br.tap;
        Y(f, f) += (y + ysh) / (a * a);
        Y(f, t) -= y / a;
        Y(t, f) -= y / a;
        Y(t, t) += y + ysh;
    }
    for (int i = 0; i < n; ++i)
        Y(i, i) += Complex(cs.buses[i].g_shunt, cs.buses[i].b_shunt);
    for (const ShuntPatch& p : patches)
        Y(p.bus_index, p.bus_index) += p.y;
    return Y;
}

} // namespace windgrid
