#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "windgrid/common.hpp"
#include "windgrid/engine.hpp"
#include "windgrid/manifold.hpp"
#include "windgrid/system_model.hpp"

namespace windgrid {

// ===========================================================================
// Trajectory deviation, modulo the rotation symmetry
// ===========================================================================

struct DeviationReport {
    bool comparable = false;
    bool grids_match = false;
    bool events_match = false;
    std::string reason;
    Real fast_sup = 0.0;  ///< largest aligned fast-state deviation
    Real slow_sup = 0.0;  ///< largest slow-state deviation
    Real eta_sup = 0.0;   ///< largest wind-state deviation (subset of fast)
    int n_compared = 0;
};

namespace detail {

/// Time intervals to skip when comparing or classifying: a settling window
/// after t = 0 and after every discrete batch, plus any interval with a
/// fault shunt active (padded by the same window).
[[nodiscard]] inline std::vector<std::pair<Real, Real>> excluded_windows(const Trajectory& tr,
                                                                         Real window) {
    std::vector<std::pair<Real, Real>> ex;
    ex.emplace_back(0.0, window);
    for (Real tb : tr.batch_times) ex.emplace_back(tb, tb + window);
    std::optional<Real> on;
    for (const auto& ev : tr.events) {
        if (ev.kind == "fault_on" && !on) on = ev.t;
        if (ev.kind == "fault_off" && on) {
            ex.emplace_back(*on, ev.t + window);
            on.reset();
        }
    }
    if (on) ex.emplace_back(*on, std::numeric_limits<Real>::infinity());
    return ex;
}

[[nodiscard]] inline bool in_windows(const std::vector<std::pair<Real, Real>>& ex, Real t) {
    for (const auto& [a, b] : ex)
        if (t >= a - 1e-9 && t <= b + 1e-9) return true;
    return false;
}

}  // namespace detail

/// Pointwise state deviation between two recorded runs of the same system.
/// Machine angles are compared after removing the mean angle difference
/// (deviation in the rotation quotient); everything else is absolute.
/// Runs are comparable only when their output grids pair up and their event
/// logs agree event for event.
[[nodiscard]] inline DeviationReport measure_deviation(const SystemModel& m, const Trajectory& a,
                                                       const Trajectory& b, Real window) {
    DeviationReport rep;
    rep.grids_match = a.points.size() == b.points.size();
    if (rep.grids_match)
        for (std::size_t i = 0; i < a.points.size(); ++i)
            if (std::abs(a.points[i].t - b.points[i].t) > 1e-9) {
                rep.grids_match = false;
                break;
            }
    rep.events_match = a.events.size() == b.events.size();
    if (rep.events_match)
        for (std::size_t i = 0; i < a.events.size(); ++i)
            if (!a.events[i].same_as(b.events[i])) {
                rep.events_match = false;
                break;
            }
    if (!rep.grids_match || !rep.events_match) {
        rep.reason = !rep.grids_match ? "output grids differ" : "event logs differ";
        return rep;
    }
    rep.comparable = true;

    const auto ex = detail::excluded_windows(a, window);
    const auto& deltas = m.map().delta_states;
    std::vector<char> is_delta(static_cast<std::size_t>(m.n_total()), 0);
    for (int i : deltas) is_delta[static_cast<std::size_t>(i)] = 1;

    for (std::size_t k = 0; k < a.points.size(); ++k) {
        const Real t = a.points[k].t;
        if (detail::in_windows(ex, t)) continue;
        const Eigen::VectorXd dev = a.points[k].u - b.points[k].u;
        Real shift = 0.0;
        if (!deltas.empty()) {
            for (int i : deltas) shift += dev[i];
            shift /= static_cast<Real>(deltas.size());
        }
        for (int i : m.map().fast_states) {
            const Real v = std::abs(dev[i] - (is_delta[static_cast<std::size_t>(i)] ? shift
                                                                                    : 0.0));
            rep.fast_sup = std::max(rep.fast_sup, v);
        }
        for (int i : m.map().slow_states)
            rep.slow_sup = std::max(rep.slow_sup, std::abs(dev[i]));
        for (int i : m.map().eta_states)
            rep.eta_sup = std::max(rep.eta_sup, std::abs(dev[i]));
        ++rep.n_compared;
    }
    return rep;
}

// ===========================================================================
// Consistent attraction after a discrete jump
// ===========================================================================

enum class AttractionVerdict { Satisfied, Violated, Indeterminate };

[[nodiscard]] inline const char* to_string(AttractionVerdict v) {
    switch (v) {
        case AttractionVerdict::Satisfied: return "satisfied";
        case AttractionVerdict::Violated: return "violated";
        case AttractionVerdict::Indeterminate: return "indeterminate";
    }
    return "?";
}

struct AttractionOptions {
    Real horizon = 30.0;  ///< boundary-layer integration span
    Real dt = 0.005;
    Real tol = 1e-4;  ///< required closeness to the fast equilibrium at the end
};

struct AttractionCheck {
    AttractionVerdict verdict = AttractionVerdict::Indeterminate;
    Real t_event = 0.0;
    Real dist = 0.0;  ///< final quotient distance to the fast equilibrium
    bool sep_found = false;
    bool sep_stable = false;
    std::string note;
};

/// Quotient distance between two full vectors over the fast block: machine
/// angles compared after removing the mean angle difference.
[[nodiscard]] inline Real quotient_fast_distance(const SystemModel& m, const Eigen::VectorXd& ua,
                                                 const Eigen::VectorXd& ub) {
    const auto& deltas = m.map().delta_states;
    Real shift = 0.0;
    if (!deltas.empty()) {
        for (int i : deltas) shift += ua[i] - ub[i];
        shift /= static_cast<Real>(deltas.size());
    }
    std::vector<char> is_delta(static_cast<std::size_t>(m.n_total()), 0);
    for (int i : deltas) is_delta[static_cast<std::size_t>(i)] = 1;
    Real dist = 0.0;
    for (int i : m.map().fast_states) {
        const Real v = ua[i] - ub[i] - (is_delta[static_cast<std::size_t>(i)] ? shift : 0.0);
        dist = std::max(dist, std::abs(v));
    }
    return dist;
}

/// Does the frozen-slow fast flow started at the post-event state converge
/// to the fast equilibrium of the post-event configuration? This is the
/// per-event admissibility requirement for trusting the deterministic and
/// reduced models across that event.
[[nodiscard]] inline AttractionCheck check_consistent_attraction(
    const SystemModel& m, const Simulator& sim, const Trajectory& tr, std::size_t batch_index,
    const AttractionOptions& opt = {}) {
    AttractionCheck out;
    if (batch_index >= tr.batch_times.size()) {
        out.note = "no such event batch";
        return out;
    }
    out.t_event = tr.batch_times[batch_index];
    const int pi = tr.point_at(out.t_event);
    if (pi < 0 || std::abs(tr.points[static_cast<std::size_t>(pi)].t - out.t_event) > 1e-6) {
        out.note = "post-event state was not recorded";
        return out;
    }
    const Eigen::VectorXd& u_post = tr.points[static_cast<std::size_t>(pi)].u;
    const DiscreteState& d = tr.batch_disc[batch_index];
    const Eigen::MatrixXcd Y = m.admittance(d);

    const ManifoldPoint mp = solve_slow_manifold(m, u_post, d, Y);
    out.sep_found = mp.found;
    out.sep_stable = mp.stable;
    if (!mp.found) {
        out.note = "fast equilibrium not found: " + mp.note;
        return out;
    }
    if (!mp.stable) {
        out.verdict = AttractionVerdict::Violated;
        out.note = "fast equilibrium is not attracting";
        return out;
    }

    RunConfig cfg;
    cfg.model = RunModel::FastFrozen;
    cfg.start_u = &u_post;
    cfg.start_disc = &d;
    cfg.horizon = opt.horizon;
    cfg.fast_dt = opt.dt;
    cfg.record = true;
    const Trajectory fl = sim.run(cfg);
    if (fl.status != RunStatus::Completed) {
        out.verdict = AttractionVerdict::Violated;
        out.note = strfmt("boundary-layer flow aborted (%s): %s", to_string(fl.status),
                          fl.note.c_str());
        return out;
    }
    out.dist = quotient_fast_distance(m, fl.points.back().u, mp.u);
    out.verdict = out.dist < opt.tol ? AttractionVerdict::Satisfied : AttractionVerdict::Violated;
    if (out.verdict == AttractionVerdict::Violated)
        out.note = strfmt("boundary-layer flow ends %.3e away from the fast equilibrium",
                          out.dist);
    return out;
}

// ===========================================================================
// Exit probability of the stochastic model from the moving neighborhood
// ===========================================================================

struct ExitOptions {
    Real sigma_scale = 1.0;
    Real h_ratio = 1.0;  ///< neighborhood radius in units of the noise size
    int n_paths = 20;
    std::uint64_t seed0 = 1;
    Real window = 2.0;       ///< settling window excluded after events
    Real horizon = -1.0;     ///< < 0: the case horizon
    Real slow_retol = 1e-3;  ///< re-solve the manifold when slow states move this much
};

struct ExitStudy {
    Real h = 0.0;
    Real h_ratio = 1.0;
    Real sigma_scale = 1.0;
    int n_paths = 0;
    int n_exited = 0;
    int n_indeterminate = 0;  ///< paths where the neighborhood could not be built
    Real exit_fraction = 0.0;
    std::vector<Real> first_exit;  ///< per path; NaN when the path never exits
    std::vector<Real> max_qf;      ///< per path, over evaluated instants
};

/// Fraction of stochastic paths that leave the moving neighborhood of the
/// slow manifold before the horizon. The neighborhood is re-centered as the
/// slow states drift and rebuilt after every discrete change.
[[nodiscard]] inline ExitStudy estimate_exit_probability(const SystemModel& m,
                                                         const Simulator& sim,
                                                         const ExitOptions& opt = {}) {
    ExitStudy st;
    st.h_ratio = opt.h_ratio;
    st.sigma_scale = opt.sigma_scale;
    st.n_paths = opt.n_paths;
    Real sigma_eff = 0.0;
    for (const auto& w : m.wind_sources()) sigma_eff = std::max(sigma_eff, w.sigma);
    st.h = opt.h_ratio * sigma_eff * opt.sigma_scale;
    const Real h2 = st.h * st.h;

    for (int p = 0; p < opt.n_paths; ++p) {
        struct PathState {
            int last_rev = -1;
            Real exclude_until = 0.0;
            bool have_tube = false;
            ManifoldPoint mp;
            Tube tube;
            Eigen::VectorXd slow_at_solve;
            Real first_exit = std::numeric_limits<Real>::quiet_NaN();
            Real max_qf = 0.0;
            bool indeterminate = false;
        } ps;
        ps.exclude_until = opt.window;

        RunConfig cfg;
        cfg.model = RunModel::Shm;
        cfg.seed = opt.seed0 + static_cast<std::uint64_t>(p);
        cfg.sigma_scale = opt.sigma_scale;
        cfg.record = false;
        cfg.horizon = opt.horizon;
        cfg.on_output = [&](Real t, const Eigen::VectorXd& u, const DiscreteState& d) {
            if (ps.last_rev != d.revision) {
                ps.last_rev = d.revision;
                ps.have_tube = false;
                if (t > 0.0) ps.exclude_until = std::max(ps.exclude_until, t + opt.window);
            }
            if (!d.fault_shunts.empty()) {
                ps.exclude_until = std::max(ps.exclude_until, t + opt.window);
                return;
            }
            if (t < ps.exclude_until - 1e-9) return;
            if (!std::isnan(ps.first_exit)) return;

            const Eigen::VectorXd zc = slow_part(m, u);
            if (!ps.have_tube ||
                (zc - ps.slow_at_solve).cwiseAbs().maxCoeff() > opt.slow_retol) {
                const Eigen::MatrixXcd Y = m.admittance(d);
                ps.mp = solve_slow_manifold(m, u, d, Y);
                if (!ps.mp.found || !ps.mp.stable) {
                    ps.indeterminate = true;
                    ps.have_tube = false;
                    return;
                }
                ps.tube = build_tube(m, ps.mp);
                if (!ps.tube.ok) {
                    ps.indeterminate = true;
                    ps.have_tube = false;
                    return;
                }
                ps.have_tube = true;
                ps.slow_at_solve = zc;
            }
            // gauge the manifold to the path's current mean machine angle
            Eigen::VectorXd dev = fast_part(m, u) - fast_part(m, ps.mp.u);
            const auto& deltas = m.map().delta_states;
            if (!deltas.empty()) {
                Real shift = 0.0;
                for (int i : deltas) shift += u[i] - ps.mp.u[i];
                shift /= static_cast<Real>(deltas.size());
                const auto& fast = m.map().fast_states;
                for (std::size_t k = 0; k < fast.size(); ++k)
                    for (int dk : deltas)
                        if (fast[k] == dk) dev[static_cast<int>(k)] -= shift;
            }
            const Real q = ps.tube.qf(dev);
            ps.max_qf = std::max(ps.max_qf, q);
            if (q > h2) ps.first_exit = t;
        };

        (void)sim.run(cfg);
        st.first_exit.push_back(ps.first_exit);
        st.max_qf.push_back(ps.max_qf);
        if (!std::isnan(ps.first_exit)) ++st.n_exited;
        if (ps.indeterminate && std::isnan(ps.first_exit)) ++st.n_indeterminate;
    }
    st.exit_fraction = opt.n_paths > 0 ? static_cast<Real>(st.n_exited) / opt.n_paths : 0.0;
    return st;
}

// ===========================================================================
// Verification report: when can the deterministic verdict be trusted?
// ===========================================================================

struct ConditionOptions {
    Real h_ratio = 1.0;
    Real window = 2.0;
    Real grid_dt = 5.0;  ///< cadence of along-trajectory manifold checks
    AttractionOptions attraction;
    std::optional<Real> horizon;
};

struct ManifoldCheck {
    Real t = 0.0;
    bool found = false;
    bool stable = false;
    Real residual = 0.0;
    std::string note;
};

struct EntryCheck {
    Real t = 0.0;  ///< evaluation instant (end of the inter-event segment)
    Real qf = 0.0;
    Real limit = 0.0;  ///< (h/2)^2
    bool inside = false;
    std::string note;
};

struct ConditionReport {
    Verdict dhm_verdict = Verdict::Stable;
    RunStatus dhm_status = RunStatus::Completed;
    Real dhm_settle = 0.0;
    std::vector<ManifoldCheck> manifold_checks;
    std::vector<EntryCheck> entry_checks;
    std::vector<AttractionCheck> attraction_checks;
    bool cond_manifold = false;
    bool cond_entry = false;
    bool cond_attraction = false;
    bool trustworthy = false;
    Real h = 0.0;
    std::string note;
};

/// Runs the deterministic model and verifies, along its trajectory, the
/// structural requirements for carrying its verdict over to the stochastic
/// model: an attracting fast equilibrium everywhere, re-entry into the half
/// neighborhood between events, and consistent attraction across each event.
[[nodiscard]] inline ConditionReport check_conditions(const SystemModel& m, const Simulator& sim,
                                                      const ConditionOptions& opt = {}) {
    ConditionReport rep;
    Real sigma_eff = 0.0;
    for (const auto& w : m.wind_sources()) sigma_eff = std::max(sigma_eff, w.sigma);
    rep.h = opt.h_ratio * sigma_eff;

    RunConfig cfg;
    cfg.model = RunModel::Dhm;
    cfg.record = true;
    cfg.stop_on_collapse = true;
    if (opt.horizon) cfg.horizon = *opt.horizon;
    const Trajectory tr = sim.run(cfg);
    rep.dhm_verdict = tr.verdict;
    rep.dhm_status = tr.status;
    rep.dhm_settle = tr.settle;

    // the deterministic run starts exactly on the equilibrium, so only
    // post-event settling windows apply here
    auto ex = detail::excluded_windows(tr, opt.window);
    ex.erase(ex.begin());

    // manifold checks: t = 0, every post-event instant, and a regular grid
    std::vector<Real> check_times;
    check_times.push_back(0.0);
    for (Real tb : tr.batch_times) check_times.push_back(tb);
    for (Real t = opt.grid_dt; t < tr.end_time + 1e-9; t += opt.grid_dt) check_times.push_back(t);
    std::sort(check_times.begin(), check_times.end());
    Real last = -1.0;
    for (Real t : check_times) {
        if (t - last < 1e-6) continue;
        last = t;
        const int pi = tr.point_at(t);
        if (pi < 0) continue;
        const auto& pt = tr.points[static_cast<std::size_t>(pi)];
        const DiscreteState& d = tr.discrete_at(pt.t);
        if (!d.fault_shunts.empty()) continue;  // mid-fault configurations are transient
        ManifoldCheck mc;
        mc.t = pt.t;
        const ManifoldPoint mp = solve_slow_manifold(m, pt.u, d, m.admittance(d));
        mc.found = mp.found;
        mc.stable = mp.stable;
        mc.residual = mp.residual;
        mc.note = mp.note;
        rep.manifold_checks.push_back(mc);
    }
    rep.cond_manifold = !rep.manifold_checks.empty();
    for (const auto& mc : rep.manifold_checks)
        if (!mc.found || !mc.stable) rep.cond_manifold = false;

    // entry condition: by the end of each quiet segment the fast deviation
    // sits inside the half-radius neighborhood
    std::vector<Real> seg_ends;
    for (Real tb : tr.batch_times) seg_ends.push_back(tb);
    seg_ends.push_back(tr.end_time);
    const Real lim = 0.25 * rep.h * rep.h;
    for (Real te : seg_ends) {
        // last recorded point strictly before te that is outside every window
        int best = -1;
        for (std::size_t i = 0; i < tr.points.size(); ++i) {
            const Real t = tr.points[i].t;
            if (t >= te - 1e-9 && te < tr.end_time - 1e-9) break;
            if (t > te + 1e-9) break;
            if (detail::in_windows(ex, t)) continue;
            best = static_cast<int>(i);
        }
        EntryCheck ec;
        ec.t = te;
        ec.limit = lim;
        if (best < 0) {
            ec.note = "no quiet instant before this event";
            rep.entry_checks.push_back(ec);
            continue;
        }
        const auto& pt = tr.points[static_cast<std::size_t>(best)];
        const DiscreteState& d = tr.discrete_at(pt.t);
        const ManifoldPoint mp = solve_slow_manifold(m, pt.u, d, m.admittance(d));
        if (!mp.found || !mp.stable) {
            ec.note = "no attracting fast equilibrium at the segment end";
            rep.entry_checks.push_back(ec);
            continue;
        }
        const Tube tube = build_tube(m, mp);
        if (!tube.ok) {
            ec.note = tube.note;
            rep.entry_checks.push_back(ec);
            continue;
        }
        ec.t = pt.t;
        ec.qf = tube.qf(fast_part(m, pt.u) - fast_part(m, mp.u));
        ec.inside = ec.qf <= lim;
        rep.entry_checks.push_back(ec);
    }
    rep.cond_entry = !rep.entry_checks.empty();
    for (const auto& ec : rep.entry_checks)
        if (!ec.inside) rep.cond_entry = false;

    for (std::size_t b = 0; b < tr.batch_times.size(); ++b)
        rep.attraction_checks.push_back(
            check_consistent_attraction(m, sim, tr, b, opt.attraction));
    rep.cond_attraction = true;
    for (const auto& ac : rep.attraction_checks)
        if (ac.verdict != AttractionVerdict::Satisfied) rep.cond_attraction = false;

    rep.trustworthy = rep.cond_manifold && rep.cond_entry && rep.cond_attraction &&
                      rep.dhm_status == RunStatus::Completed;
    if (!rep.trustworthy) {
        if (rep.dhm_status != RunStatus::Completed)
            rep.note = "deterministic run did not complete";
        else if (!rep.cond_manifold)
            rep.note = "fast equilibrium missing or repelling along the trajectory";
        else if (!rep.cond_entry)
            rep.note = "state does not re-enter the half neighborhood between events";
        else
            rep.note = "consistent attraction fails across at least one event";
    }
    return rep;
}

}  // namespace windgrid
