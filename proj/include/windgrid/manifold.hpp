#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "windgrid/common.hpp"
#include "windgrid/devices.hpp"
#include "windgrid/system_model.hpp"

namespace windgrid {

// ===========================================================================
// Slow-manifold point
// ===========================================================================

/// Equilibrium of the fast subsystem with the slow states held fixed: the
/// attracting branch of the slow manifold evaluated at one slow coordinate.
/// Absolute rotor angle is a symmetry direction, so the reference machine's
/// angle is pinned at the guess and the other angle equations are taken
/// relative to it; the remaining eigenvalue near zero along the rotation is
/// identified and excluded from the stability call.
struct ManifoldPoint {
    bool found = false;
    Eigen::VectorXd u;        ///< full vector: slow from the guess, fast/alg solved
    Eigen::MatrixXd j_red;    ///< fast-block Jacobian with algebraics eliminated
    Eigen::VectorXcd eigs;    ///< spectrum of j_red
    bool stable = false;      ///< all eigenvalues strictly left (rotation excluded)
    int rotation_index = -1;  ///< eigenvalue riding the rotation symmetry, -1 if none
    Real residual = 0.0;
    std::string note;
};

/// Unit direction of the rotation symmetry inside the fast block: equal
/// weight on every machine angle.
[[nodiscard]] inline Eigen::VectorXd rotation_direction(const SystemModel& m) {
    const auto& fast = m.map().fast_states;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<int>(fast.size()));
    for (std::size_t k = 0; k < fast.size(); ++k)
        for (int dk : m.map().delta_states)
            if (fast[k] == dk) r[static_cast<int>(k)] = 1.0;
    const Real n = r.norm();
    if (n > 0.0) r /= n;
    return r;
}

[[nodiscard]] inline ManifoldPoint solve_slow_manifold(const SystemModel& m,
                                                       const Eigen::VectorXd& u_guess,
                                                       const DiscreteState& d,
                                                       const Eigen::MatrixXcd& Y,
                                                       Real tol = 1e-10, int max_iter = 50) {
    ManifoldPoint out;
    out.u = u_guess;

    const auto& fast = m.map().fast_states;
    const int nf = static_cast<int>(fast.size());
    const int ns = m.n_state();
    const int na = m.n_alg();
    const int N = m.n_total();

    // unknowns: fast states (minus the gauge angle) plus algebraics;
    // equations: their residual rows, machine-angle rows relative to the
    // reference machine's row
    const int gauge = m.map().delta_states.empty() ? -1 : m.map().delta_states.front();
    std::vector<int> idx;
    std::vector<char> rel(static_cast<std::size_t>(N), 0);
    for (int i : fast)
        if (i != gauge) idx.push_back(i);
    for (int i = ns; i < N; ++i) idx.push_back(i);
    for (std::size_t k = 0; k < m.map().delta_states.size(); ++k)
        if (m.map().delta_states[k] != gauge)
            rel[static_cast<std::size_t>(m.map().delta_states[k])] = 1;
    const int n = static_cast<int>(idx.size());

    Eigen::VectorXd R(N), RN(n);
    Eigen::MatrixXd J, A(n, n);
    auto assemble = [&]() {
        Real rn = 0.0;
        for (int r = 0; r < n; ++r) {
            Real v = R[idx[static_cast<std::size_t>(r)]];
            if (rel[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])] != 0)
                v -= R[gauge];
            RN[r] = v;
            rn = std::max(rn, std::abs(v));
        }
        return rn;
    };

    bool converged = false;
    for (int it = 0; it <= max_iter; ++it) {
        m.residual(out.u, d, Y, R);
        out.residual = assemble();
        if (out.residual < tol) {
            converged = true;
            break;
        }
        if (it == max_iter) break;
        m.jacobian(out.u, d, Y, J);
        for (int r = 0; r < n; ++r) {
            const int gr = idx[static_cast<std::size_t>(r)];
            for (int c = 0; c < n; ++c) {
                Real v = J(gr, idx[static_cast<std::size_t>(c)]);
                if (rel[static_cast<std::size_t>(gr)] != 0)
                    v -= J(gauge, idx[static_cast<std::size_t>(c)]);
                A(r, c) = v;
            }
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
        if (lu.rcond() < 1e-13) {
            out.note = strfmt("fast equilibrium Jacobian is singular (rcond %.2e)", lu.rcond());
            return out;
        }
        const Eigen::VectorXd du = lu.solve(-RN);
        if (!du.allFinite()) {
            out.note = "correction not finite";
            return out;
        }
        for (int r = 0; r < n; ++r) out.u[idx[static_cast<std::size_t>(r)]] += du[r];
        if (out.u.cwiseAbs().maxCoeff() > 1e7) {
            out.note = "iterates diverged";
            return out;
        }
    }
    if (!converged) {
        out.note = strfmt("no convergence in %d iterations (residual %.3e)", max_iter,
                          out.residual);
        return out;
    }

    // reduced fast dynamics: eliminate the algebraic block
    m.jacobian(out.u, d, Y, J);
    Eigen::MatrixXd Fx(nf, nf), Fy(nf, na), Gx(na, nf);
    for (int r = 0; r < nf; ++r) {
        for (int c = 0; c < nf; ++c) Fx(r, c) = J(fast[static_cast<std::size_t>(r)],
                                                  fast[static_cast<std::size_t>(c)]);
        for (int c = 0; c < na; ++c) Fy(r, c) = J(fast[static_cast<std::size_t>(r)], ns + c);
    }
    for (int r = 0; r < na; ++r)
        for (int c = 0; c < nf; ++c) Gx(r, c) = J(ns + r, fast[static_cast<std::size_t>(c)]);
    Eigen::PartialPivLU<Eigen::MatrixXd> gy(J.bottomRightCorner(na, na));
    if (gy.rcond() < 1e-13) {
        out.note = strfmt("coupling block is singular on the manifold (rcond %.2e)", gy.rcond());
        return out;
    }
    out.j_red = Fx - Fy * gy.solve(Gx);

    Eigen::EigenSolver<Eigen::MatrixXd> es(out.j_red);
    if (es.info() != Eigen::Success) {
        out.note = "eigenvalue computation failed";
        return out;
    }
    out.eigs = es.eigenvalues();

    // the rotation rides a zero eigenvalue whose eigenvector lies along the
    // machine-angle direction (with the coupling response folded in)
    const Eigen::VectorXd r = rotation_direction(m);
    int rot = -1;
    Real best_align = 0.5;
    for (int k = 0; k < out.eigs.size(); ++k) {
        if (std::abs(out.eigs[k]) > 1e-5) continue;
        Eigen::VectorXcd v = es.eigenvectors().col(k);
        const Real align = std::abs((r.cast<Complex>().adjoint() * v)(0)) / v.norm();
        if (align > best_align) {
            best_align = align;
            rot = k;
        }
    }
    out.rotation_index = rot;
    bool stable = true;
    for (int k = 0; k < out.eigs.size(); ++k) {
        if (k == rot) continue;
        if (out.eigs[k].real() >= -1e-6) stable = false;
    }
    out.stable = stable;
    out.found = true;
    return out;
}

// ===========================================================================
// Lyapunov equation and the concentration tube
// ===========================================================================

/// Solves J X + X J^T + C = 0 for symmetric C via complex Schur reduction
/// with back-substitution column by column. Requires the spectrum of J to
/// avoid pairing lambda_i + conj(lambda_k) = 0 (true for Hurwitz J).
[[nodiscard]] inline Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& Jm,
                                                    const Eigen::MatrixXd& C) {
    const int n = static_cast<int>(Jm.rows());
    if (n == 0) return Eigen::MatrixXd::Zero(0, 0);
    Eigen::ComplexSchur<Eigen::MatrixXcd> schur(Jm.cast<Complex>());
    if (schur.info() != Eigen::Success) throw NumericsError("Schur reduction failed");
    const Eigen::MatrixXcd U = schur.matrixU();
    const Eigen::MatrixXcd T = schur.matrixT();
    const Eigen::MatrixXcd Ct = U.adjoint() * C.cast<Complex>() * U;
    Eigen::MatrixXcd Ym = Eigen::MatrixXcd::Zero(n, n);
    for (int k = n - 1; k >= 0; --k) {
        Eigen::VectorXcd rhs = -Ct.col(k);
        for (int j = k + 1; j < n; ++j) rhs -= Ym.col(j) * std::conj(T(k, j));
        Eigen::MatrixXcd Tk = T;
        for (int i = 0; i < n; ++i) Tk(i, i) += std::conj(T(k, k));
        for (int i = 0; i < n; ++i)
            if (std::abs(Tk(i, i)) < 1e-12)
                throw NumericsError("Lyapunov solve hit a resonant eigenvalue pair");
        Ym.col(k) = Tk.triangularView<Eigen::Upper>().solve(rhs);
    }
    const Eigen::MatrixXcd Xc = U * Ym * U.adjoint();
    Eigen::MatrixXd X = Xc.real();
    return 0.5 * (X + X.transpose());
}

/// Ellipsoidal neighborhood of a manifold point in the rotation quotient of
/// the fast block: level sets of dev^T (X + delta I)^{-1} dev where X is the
/// unit-noise stationary covariance of the linearized fast dynamics. With a
/// single noise source X is a Gramian whose spectrum spans many decades; the
/// regularization delta is taken relative to trace(X) so that directions
/// whose stationary response lies below what manifold tracking and curvature
/// corrections can resolve do not dominate the metric, while excursions of
/// more than a few percent register in any direction.
struct Tube {
    Eigen::MatrixXd X;  ///< quotient covariance, nq x nq
    Eigen::MatrixXd Q;  ///< fast-block quotient basis, nf x nq
    Eigen::LDLT<Eigen::MatrixXd> solver;
    Real sigma_eff = 0.0;
    Real reg = 0.0;  ///< regularization added to the spectrum of X
    bool ok = false;
    std::string note;

    /// Quadratic form of a fast-block deviation (length nf).
    [[nodiscard]] Real qf(const Eigen::VectorXd& dev_fast) const {
        const Eigen::VectorXd dq = Q.transpose() * dev_fast;
        return dq.dot(solver.solve(dq));
    }

    /// Membership radius for a given ratio and noise scaling.
    [[nodiscard]] Real radius(Real h_ratio, Real sigma_scale) const {
        return h_ratio * sigma_eff * sigma_scale;
    }

    [[nodiscard]] bool inside(const Eigen::VectorXd& dev_fast, Real h) const {
        return qf(dev_fast) <= h * h;
    }
};

/// Quotient basis: orthonormal complement of the rotation direction, from
/// the last nf-1 columns of a Householder reflection mapping e_0 to r.
[[nodiscard]] inline Eigen::MatrixXd quotient_basis(const Eigen::VectorXd& r) {
    const int nf = static_cast<int>(r.size());
    if (r.norm() < 0.5) return Eigen::MatrixXd::Identity(nf, nf);
    Eigen::VectorXd w = r;
    w[0] += (r[0] >= 0.0 ? 1.0 : -1.0);
    const Real wn2 = w.squaredNorm();
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(nf, nf) - (2.0 / wn2) * (w * w.transpose());
    // column 0 of H is +-r; the remainder spans its complement
    return H.rightCols(nf - 1);
}

[[nodiscard]] inline Tube build_tube(const SystemModel& m, const ManifoldPoint& mp) {
    Tube tube;
    if (!mp.found) {
        tube.note = "no manifold point";
        return tube;
    }
    if (!mp.stable) {
        tube.note = "manifold point is not attracting";
        return tube;
    }
    const auto& fast = m.map().fast_states;
    const int nf = static_cast<int>(fast.size());

    tube.Q = quotient_basis(rotation_direction(m));
    const Eigen::MatrixXd Jq = tube.Q.transpose() * mp.j_red * tube.Q;

    // unit-intensity noise enters on the wind-state rows of the fast block
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(nf, std::max(1, m.n_wind()));
    for (int s = 0; s < m.n_wind(); ++s) {
        const int row = m.eta_state(s);
        for (int k = 0; k < nf; ++k)
            if (fast[static_cast<std::size_t>(k)] == row) B(k, s) = 1.0;
    }
    const Eigen::MatrixXd Bq = tube.Q.transpose() * B;

    try {
        tube.X = solve_lyapunov(Jq, Bq * Bq.transpose());
    } catch (const NumericsError& e) {
        tube.note = e.what();
        return tube;
    }
    const int nq = static_cast<int>(tube.X.rows());
    tube.reg = 1e-12 + 1e-4 * tube.X.trace();
    tube.solver.compute(tube.X + tube.reg * Eigen::MatrixXd::Identity(nq, nq));
    if (tube.solver.info() != Eigen::Success) {
        tube.note = "covariance factorization failed";
        return tube;
    }
    Real se = 0.0;
    for (const auto& w : m.wind_sources()) se = std::max(se, w.sigma);
    tube.sigma_eff = se;
    tube.ok = true;
    return tube;
}

/// Fast-block components of a full vector.
[[nodiscard]] inline Eigen::VectorXd fast_part(const SystemModel& m, const Eigen::VectorXd& u) {
    const auto& fast = m.map().fast_states;
    Eigen::VectorXd x(static_cast<int>(fast.size()));
    for (std::size_t k = 0; k < fast.size(); ++k) x[static_cast<int>(k)] = u[fast[k]];
    return x;
}

/// Slow-state components of a full vector.
[[nodiscard]] inline Eigen::VectorXd slow_part(const SystemModel& m, const Eigen::VectorXd& u) {
    const auto& slow = m.map().slow_states;
    Eigen::VectorXd x(static_cast<int>(slow.size()));
    for (std::size_t k = 0; k < slow.size(); ++k) x[static_cast<int>(k)] = u[slow[k]];
    return x;
}

}  // namespace windgrid
