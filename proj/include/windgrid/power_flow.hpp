#pragma once

#include <Eigen/Dense>
#include <vector>

#include "windgrid/case.hpp"
#include "windgrid/common.hpp"
#include "windgrid/network.hpp"

namespace windgrid {

struct PowerFlowResult {
    bool converged = false;
    int iterations = 0;
    Real max_mismatch = 0.0;
    std::vector<Real> vmag;    ///< per bus, case order
    std::vector<Real> theta;   ///< per bus [rad]
    std::vector<Real> p_inj;   ///< net computed injection per bus [pu]
    std::vector<Real> q_inj;
    std::vector<Real> p_gen;   ///< generation per bus (injection plus local load)
    std::vector<Real> q_gen;

    [[nodiscard]] Complex voltage(int bus_index) const {
        return std::polar(vmag[bus_index], theta[bus_index]);
    }
};

/// Newton-Raphson power flow in polar coordinates, flat start, analytic
/// Jacobian. PV buses hold P and |V|; the slack holds |V| and angle.
/// Converged means max |P,Q mismatch| < tol.
[[nodiscard]] inline PowerFlowResult
solve_power_flow(const PowerSystemCase& cs, const Eigen::MatrixXcd& Y,
                 Real tol = 1e-8, int max_iter = 50) {
    const int n = static_cast<int>(cs.buses.size());

    // Scheduled injections: dispatch minus load. The slack P and PV/slack Q
    // are free.
    std::vector<Real> p_sched(n, 0.0), q_sched(n, 0.0);
    for (int i = 0; i < n; ++i) {
        p_sched[i] -= cs.buses[i].p_load;
        q_sched[i] -= cs.buses[i].q_load;
    }
    for (const GenParams& g : cs.gens) p_sched[cs.bus_index(g.bus)] += g.pg;
    for (const DfigParams& d : cs.dfigs) p_sched[cs.bus_index(d.bus)] += d.pg;

    std::vector<Real> vm(n, 1.0), th(n, 0.0);
    int slack = -1;
    for (int i = 0; i < n; ++i) {
        const Bus& b = cs.buses[i];
        if (b.kind == BusKind::Slack) {
            slack = i;
            vm[i] = b.v_set;
            th[i] = b.theta_set;
        } else if (b.kind == BusKind::PV) {
            vm[i] = b.v_set;
        }
    }

    // Unknown layout: angles for all non-slack buses, then |V| for PQ buses.
    std::vector<int> ang_idx, mag_idx;
    for (int i = 0; i < n; ++i) {
        if (i != slack) ang_idx.push_back(i);
        if (cs.buses[i].kind == BusKind::PQ) mag_idx.push_back(i);
    }
    const int na = static_cast<int>(ang_idx.size());
    const int nm = static_cast<int>(mag_idx.size());
    const int nu = na + nm;

    auto injections = [&](std::vector<Real>& p, std::vector<Real>& q) {
        for (int i = 0; i < n; ++i) {
            Real pi = 0.0, qi = 0.0;
            for (int j = 0; j < n; ++j) {
                const Real g = Y(i, j).real(), b = Y(i, j).imag();
                if (g == 0.0 && b == 0.0) continue;
                const Real dth = th[i] - th[j];
                const Real c = std::cos(dth), s = std::sin(dth);
                pi += vm[i] * vm[j] * (g * c + b * s);
                qi += vm[i] * vm[j] * (g * s - b * c);
            }
            p[i] = pi;
            q[i] = qi;
        }
    };

    PowerFlowResult out;
    std::vector<Real> p(n), q(n);
    Eigen::MatrixXd J(nu, nu);
    Eigen::VectorXd mis(nu);

    for (int iter = 0; iter <= max_iter; ++iter) {
        injections(p, q);
        Real worst = 0.0;
        for (int k = 0; k < na; ++k) {
            mis(k) = p_sched[ang_idx[k]] - p[ang_idx[k]];
            worst = std::max(worst, std::abs(mis(k)));
        }
        for (int k = 0; k < nm; ++k) {
            mis(na + k) = q_sched[mag_idx[k]] - q[mag_idx[k]];
            worst = std::max(worst, std::abs(mis(na + k)));
        }
        out.iterations = iter;
        out.max_mismatch = worst;
        if (worst < tol) {
            out.converged = true;
            break;
        }
        if (iter == max_iter) break;

        J.setZero();
        auto dP_dth = [&](int i, int j) -> Real {
            if (i == j) return -q[i] - vm[i] * vm[i] * Y(i, i).imag();
            const Real dth = th[i] - th[j];
            return vm[i] * vm[j] * (Y(i, j).real() * std::sin(dth) - Y(i, j).imag() * std::cos(dth));
        };
        auto dP_dv = [&](int i, int j) -> Real {
            if (i == j) return p[i] / vm[i] + vm[i] * Y(i, i).real();
            const Real dth = th[i] - th[j];
            return vm[i] * (Y(i, j).real() * std::cos(dth) + Y(i, j).imag() * std::sin(dth));
        };
        auto dQ_dth = [&](int i, int j) -> Real {
            if (i == j) return p[i] - vm[i] * vm[i] * Y(i, i).real();
            const Real dth = th[i] - th[j];
            return -vm[i] * vm[j] * (Y(i, j).real() * std::cos(dth) + Y(i, j).imag() * std::sin(dth));
        };
        auto dQ_dv = [&](int i, int j) -> Real {
            if (i == j) return q[i] / vm[i] - vm[i] * Y(i, i).imag();
            const Real dth = th[i] - th[j];
            return vm[i] * (Y(i, j).real() * std::sin(dth) - Y(i, j).imag() * std::cos(dth));
        };
        for (int r = 0; r < na; ++r) {
            for (int c = 0; c < na; ++c) J(r, c) = dP_dth(ang_idx[r], ang_idx[c]);
            for (int c = 0; c < nm; ++c) J(r, na + c) = dP_dv(ang_idx[r], mag_idx[c]);
        }
        for (int r = 0; r < nm; ++r) {
            for (int c = 0; c < na; ++c) J(na + r, c) = dQ_dth(mag_idx[r], ang_idx[c]);
            for (int c = 0; c < nm; ++c) J(na + r, na + c) = dQ_dv(mag_idx[r], mag_idx[c]);
        }

        const Eigen::VectorXd dx = J.partialPivLu().solve(mis);
        if (!dx.allFinite()) break;
        for (int k = 0; k < na; ++k) th[ang_idx[k]] += dx(k);
        for (int k = 0; k < nm; ++k) vm[mag_idx[k]] += dx(na + k);
        for (int k = 0; k < nm; ++k)
            if (vm[mag_idx[k]] <= 0.0) vm[mag_idx[k]] = 1e-3; // keep magnitudes physical
    }

    injections(p, q);
    out.vmag = vm;
    out.theta = th;
    out.p_inj = p;
    out.q_inj = q;
    out.p_gen.assign(n, 0.0);
    out.q_gen.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        out.p_gen[i] = p[i] + cs.buses[i].p_load;
        out.q_gen[i] = q[i] + cs.buses[i].q_load;
    }
    return out;
}

/// Convenience overload building the admittance from the case's own branches.
[[nodiscard]] inline PowerFlowResult
solve_power_flow(const PowerSystemCase& cs, Real tol = 1e-8, int max_iter = 50) {
    return solve_power_flow(cs, build_admittance(cs, cs.branches), tol, max_iter);
}

} // namespace windgrid
