#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "windgrid/case.hpp"
#include "windgrid/common.hpp"
#include "windgrid/devices.hpp"
#include "windgrid/discrete.hpp"
#include "windgrid/rng.hpp"
#include "windgrid/system_model.hpp"
#include "windgrid/wind.hpp"

namespace windgrid {

// ===========================================================================
// Run descriptors
// ===========================================================================

enum class RunModel {
    Shm,        ///< stochastic model: full dynamics, driven OU wind states
    Dhm,        ///< deterministic model: full dynamics, wind pinned at its median
    Qss,        ///< reduced model: fast states held on their equilibrium manifold
    FastFrozen  ///< boundary-layer model: slow states frozen, fast states free
};

enum class RunStatus { Completed, CollapseStopped, Singular, Diverged };

enum class Verdict { Stable, Unsettled, Collapse, Singular, Diverged };

[[nodiscard]] inline const char* to_string(RunModel m) {
    switch (m) {
        case RunModel::Shm: return "shm";
        case RunModel::Dhm: return "dhm";
        case RunModel::Qss: return "qss";
        case RunModel::FastFrozen: return "fast";
    }
    return "?";
}
[[nodiscard]] inline const char* to_string(RunStatus s) {
    switch (s) {
        case RunStatus::Completed: return "completed";
        case RunStatus::CollapseStopped: return "collapse_stopped";
        case RunStatus::Singular: return "singular";
        case RunStatus::Diverged: return "diverged";
    }
    return "?";
}
[[nodiscard]] inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::Stable: return "stable";
        case Verdict::Unsettled: return "unsettled";
        case Verdict::Collapse: return "collapse";
        case Verdict::Singular: return "singular";
        case Verdict::Diverged: return "diverged";
    }
    return "?";
}

struct TrajectoryPoint {
    Real t = 0.0;
    Eigen::VectorXd u;
};

struct Trajectory {
    RunModel model = RunModel::Dhm;
    std::uint64_t seed = 0;
    Real sigma_scale = 1.0;
    std::vector<TrajectoryPoint> points;  ///< output grid plus post-event instants
    std::vector<EventRecord> events;
    std::vector<Real> batch_times;          ///< one per applied event batch
    std::vector<DiscreteState> batch_disc;  ///< discrete state after each batch
    DiscreteState disc_initial;
    DiscreteState disc_final;
    RunStatus status = RunStatus::Completed;
    Verdict verdict = Verdict::Stable;
    std::string note;
    Real end_time = 0.0;
    Real settle = 0.0;       ///< final derivative norm (rotation removed)
    Real min_voltage = 2.0;  ///< lowest sampled bus voltage over the run
    double wall_ms = 0.0;
    long newton_iters = 0;
    long steps = 0;

    /// Discrete state in effect at time t.
    [[nodiscard]] const DiscreteState& discrete_at(Real t) const {
        const DiscreteState* d = &disc_initial;
        for (std::size_t i = 0; i < batch_times.size(); ++i)
            if (batch_times[i] <= t + 1e-9) d = &batch_disc[i];
        return *d;
    }

    /// Index of the last recorded point at or before time t; the point AT an
    /// event instant is the post-event state.
    [[nodiscard]] int point_at(Real t) const {
        int best = -1;
        for (std::size_t i = 0; i < points.size(); ++i)
            if (points[i].t <= t + 1e-9) best = static_cast<int>(i);
        return best;
    }
};

struct RunConfig {
    RunModel model = RunModel::Dhm;
    std::uint64_t seed = 1;
    Real sigma_scale = 1.0;
    Real horizon = -1.0;  ///< < 0: the case horizon
    bool record = true;
    bool stop_on_collapse = true;
    std::optional<Real> shm_step;      ///< override of the fixed step
    std::optional<Real> dhm_tol;       ///< override of the local error tolerance
    std::optional<Real> dhm_max_step;  ///< override of the adaptive step cap
    /// Called at every output tick (and post-event instant): (t, u, d).
    std::function<void(Real, const Eigen::VectorXd&, const DiscreteState&)> on_output;
    // FastFrozen only: start point, discrete state, and fixed step
    const Eigen::VectorXd* start_u = nullptr;
    const DiscreteState* start_disc = nullptr;
    Real fast_dt = 0.005;
};

// ===========================================================================
// Simulator
// ===========================================================================

/// Runs one trajectory of a chosen model from the shared equilibrium. The
/// simulator itself is immutable and safe to use from several threads at
/// once; each run works on private copies.
class Simulator {
public:
    Simulator(const SystemModel& model, Eigen::VectorXd u0, DiscreteState d0)
        : model_(&model), u0_(std::move(u0)), d0_(std::move(d0)) {}

    [[nodiscard]] const SystemModel& model() const { return *model_; }
    [[nodiscard]] const Eigen::VectorXd& u0() const { return u0_; }
    [[nodiscard]] const DiscreteState& d0() const { return d0_; }

    [[nodiscard]] Trajectory run(const RunConfig& cfg) const {
        const auto t_start = std::chrono::steady_clock::now();
        const SimOptions& so = model_->system_case().sim;
        Trajectory out;
        out.model = cfg.model;
        out.seed = cfg.seed;
        out.sigma_scale = cfg.sigma_scale;

        Worker w(*model_, cfg, so);
        w.init(u0_, d0_, cfg);
        out.disc_initial = w.d;
        w.drive(out);

        out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                t_start)
                          .count();
        return out;
    }

private:
    /// Per-run mutable machinery.
    struct Worker {
        const SystemModel& m;
        const SimOptions& so;
        const RunConfig& cfg;
        Real horizon;
        Real monitor_dt, output_dt;
        Real newton_tol;
        int newton_max;

        Eigen::VectorXd u;
        DiscreteState d;
        Eigen::MatrixXcd Y;
        Eigen::MatrixXd J;      // structural Jacobian at last refresh
        Eigen::MatrixXd A;      // Newton matrix over the solve set
        Eigen::PartialPivLU<Eigen::MatrixXd> lu;
        bool lu_valid = false;
        Real lu_dt = 0.0;
        int lu_revision = -1;
        int last_iters = 0;

        std::vector<int> solve_idx;   // global indices in the Newton system
        std::vector<char> integrated; // parallel: 1 = trapezoid row, 0 = constraint row
        std::vector<int> where;       // global index -> local position or -1
        std::vector<int> eta_idx;     // assigned-exactly state rows
        // Reduced model: absolute rotor angle is a gauge freedom, so the
        // reference machine's angle is held and the other angle constraints
        // are taken relative to it (their row minus the reference row).
        int gauge_row = -1;
        std::vector<char> rel_row;

        Eigen::VectorXd f_prev;       // state-row derivatives at current point
        Eigen::VectorXd f_old;        // derivatives one accepted step back
        Real dt_prev = 0.0;
        bool have_hist = false;

        std::vector<RandomStream> noise;
        std::vector<Real> sigma_run;

        Real t = 0.0;
        Real dt_next = 0.0;
        Real last_event_t = -1e30;
        std::optional<Real> below_since;
        bool collapsed = false;
        Real shm_dt, shm_dt_fault, refine_window;
        Real dhm_tol_v, dhm_min, dhm_max;
        long stat_iters = 0;
        long stat_steps = 0;

        Worker(const SystemModel& model, const RunConfig& c, const SimOptions& s)
            : m(model), so(s), cfg(c) {}

        void init(const Eigen::VectorXd& u0, const DiscreteState& dd0, const RunConfig& c) {
            u = c.start_u != nullptr ? *c.start_u : u0;
            d = c.start_disc != nullptr ? *c.start_disc : dd0;
            horizon = c.horizon > 0.0 ? c.horizon : so.horizon;
            monitor_dt = so.monitor_dt;
            output_dt = so.output_dt;
            newton_tol = so.newton_tol;
            newton_max = so.newton_max_iter;
            shm_dt = c.shm_step.value_or(so.shm_step);
            shm_dt_fault = std::min(so.shm_step_fault, shm_dt);
            refine_window = so.refine_window;
            dhm_tol_v = c.dhm_tol.value_or(so.dhm_tol);
            dhm_min = so.dhm_min_step;
            dhm_max = c.dhm_max_step.value_or(so.dhm_max_step);

            // solve set: which rows the Newton iteration owns
            const int ns = m.n_state();
            const int N = m.n_total();
            std::vector<char> assigned(static_cast<std::size_t>(N), 0);
            std::vector<char> frozen(static_cast<std::size_t>(N), 0);
            for (int e : m.map().eta_states) {
                assigned[static_cast<std::size_t>(e)] = 1;
                eta_idx.push_back(e);
            }
            if (c.model == RunModel::FastFrozen)
                for (int i : m.map().slow_states) frozen[static_cast<std::size_t>(i)] = 1;
            rel_row.assign(static_cast<std::size_t>(N), 0);
            if (c.model == RunModel::Qss && !m.map().delta_states.empty()) {
                gauge_row = m.map().delta_states.front();
                frozen[static_cast<std::size_t>(gauge_row)] = 1;
                for (std::size_t k = 1; k < m.map().delta_states.size(); ++k)
                    rel_row[static_cast<std::size_t>(m.map().delta_states[k])] = 1;
            }
            where.assign(static_cast<std::size_t>(N), -1);
            for (int i = 0; i < N; ++i) {
                if (assigned[static_cast<std::size_t>(i)] || frozen[static_cast<std::size_t>(i)])
                    continue;
                bool integ;
                if (i >= ns) {
                    integ = false;  // network / wind coupling rows
                } else if (c.model == RunModel::Qss) {
                    // slow states step in time; fast states ride the manifold
                    integ = m.map().states[static_cast<std::size_t>(i)].cls == StateClass::Slow;
                } else {
                    integ = true;
                }
                where[static_cast<std::size_t>(i)] = static_cast<int>(solve_idx.size());
                solve_idx.push_back(i);
                integrated.push_back(integ ? 1 : 0);
            }

            // per-source noise streams and run intensities
            const auto& winds = m.wind_sources();
            const bool stochastic = c.model == RunModel::Shm;
            for (std::size_t s = 0; s < winds.size(); ++s) {
                noise.emplace_back(c.seed, static_cast<std::uint64_t>(s));
                sigma_run.push_back(stochastic ? winds[s].sigma * c.sigma_scale : 0.0);
                if (stochastic && !winds[s].eta0_pinned && c.start_u == nullptr) {
                    RandomStream init_stream(c.seed, 1000 + static_cast<std::uint64_t>(s));
                    const Real eta0 = ou_stationary_std(winds[s].alpha, sigma_run.back()) *
                                      init_stream.normal();
                    u[m.eta_state(static_cast<int>(s))] = eta0;
                    u[m.map().n_state() + 2 * m.n_bus() + static_cast<int>(s)] =
                        winds[s].speed(eta0);
                }
            }

            Y = m.admittance(d);
            f_prev.resize(m.n_state());
            refresh_f();
            dt_next = initial_dt();
        }

        [[nodiscard]] Real initial_dt() const {
            switch (cfg.model) {
                case RunModel::Shm: return shm_dt;
                case RunModel::FastFrozen: return cfg.fast_dt;
                default: return std::max(dhm_min, Real(1e-3));
            }
        }

        void refresh_f() {
            Eigen::VectorXd R(m.n_total());
            m.residual(u, d, Y, R);
            f_prev = R.head(m.n_state());
        }

        [[nodiscard]] bool monitors_enabled() const { return cfg.model != RunModel::FastFrozen; }

        [[nodiscard]] Real next_grid(Real now, Real step) const {
            const Real k = std::floor(now / step + 1e-9) + 1.0;
            return k * step;
        }

        void factorize(const Eigen::VectorXd& at, Real dt) {
            m.jacobian(at, d, Y, J);
            const int n = static_cast<int>(solve_idx.size());
            A.resize(n, n);
            for (int r = 0; r < n; ++r) {
                const int gr = solve_idx[static_cast<std::size_t>(r)];
                const bool integ = integrated[static_cast<std::size_t>(r)] != 0;
                const bool rel = rel_row[static_cast<std::size_t>(gr)] != 0;
                for (int c2 = 0; c2 < n; ++c2) {
                    const int gc = solve_idx[static_cast<std::size_t>(c2)];
                    Real v = J(gr, gc);
                    if (rel) v -= J(gauge_row, gc);
                    if (integ) v = (r == c2 ? 1.0 : 0.0) - 0.5 * dt * v;
                    A(r, c2) = v;
                }
            }
            lu.compute(A);
            if (lu.rcond() < so.rcond_min)
                throw NumericsError(strfmt("system matrix is numerically singular "
                                           "(rcond %.2e at t=%.4f)", lu.rcond(), t));
            lu_valid = true;
            lu_dt = dt;
            lu_revision = d.revision;
        }

        /// One implicit step of size dt onto u_try. Returns success; leaves
        /// the converged state in u_try and its derivatives in f_try.
        bool try_step(Real dt, const std::vector<Real>& eta_new, Eigen::VectorXd& u_try,
                      Eigen::VectorXd& f_try, std::string& err) {
            u_try = u;
            for (std::size_t s = 0; s < eta_idx.size(); ++s)
                u_try[eta_idx[s]] = eta_new[s];
            const int n = static_cast<int>(solve_idx.size());
            Eigen::VectorXd RN(n), Rfull(m.n_total());
            bool refreshed = false;
            if (!lu_valid || d.revision != lu_revision ||
                std::abs(dt - lu_dt) > 0.2 * std::max(dt, lu_dt) || last_iters >= 5) {
                try {
                    factorize(u, dt);
                } catch (const NumericsError& e) {
                    err = e.what();
                    return false;
                }
                refreshed = true;
            }
            for (int it = 0; it <= newton_max; ++it) {
                m.residual(u_try, d, Y, Rfull);
                Real rn = 0.0;
                for (int r = 0; r < n; ++r) {
                    const int gr = solve_idx[static_cast<std::size_t>(r)];
                    Real v;
                    if (integrated[static_cast<std::size_t>(r)] != 0) {
                        v = u_try[gr] - u[gr] - 0.5 * dt * (f_prev[gr] + Rfull[gr]);
                    } else {
                        v = Rfull[gr];
                        if (rel_row[static_cast<std::size_t>(gr)] != 0) v -= Rfull[gauge_row];
                    }
                    RN[r] = v;
                    rn = std::max(rn, std::abs(v));
                }
                if (rn < newton_tol) {
                    last_iters = it;
                    stat_iters += it;
                    f_try = Rfull.head(m.n_state());
                    return true;
                }
                if (it == newton_max) break;
                if (!refreshed && it >= 3) {
                    // stale frozen Jacobian: rebuild once at the iterate
                    try {
                        factorize(u_try, dt);
                    } catch (const NumericsError& e) {
                        err = e.what();
                        return false;
                    }
                    refreshed = true;
                }
                const Eigen::VectorXd du = lu.solve(-RN);
                if (!du.allFinite()) {
                    err = strfmt("Newton correction not finite at t=%.4f", t);
                    return false;
                }
                for (int r = 0; r < n; ++r) u_try[solve_idx[static_cast<std::size_t>(r)]] += du[r];
                if (u_try.cwiseAbs().maxCoeff() > 1e7) {
                    err = strfmt("iterate diverged at t=%.4f", t);
                    return false;
                }
            }
            err = strfmt("Newton stalled after %d iterations at t=%.4f (dt=%.3e)", newton_max, t,
                         dt);
            last_iters = newton_max;
            return false;
        }

        /// Re-solve the instantaneous relations after a discrete jump: the
        /// coupling equations, plus (in the reduced model) the fast-state
        /// equilibrium rows, while the stepped states hold their values.
        bool solve_algebraic(std::string& err) {
            std::vector<int> sub;
            for (std::size_t r = 0; r < solve_idx.size(); ++r)
                if (integrated[r] == 0) sub.push_back(solve_idx[r]);
            const int n = static_cast<int>(sub.size());
            Eigen::VectorXd Rfull(m.n_total()), RN(n);
            Eigen::MatrixXd Asub(n, n);
            auto row_val = [&](const Eigen::VectorXd& R, int gr) {
                Real v = R[gr];
                if (rel_row[static_cast<std::size_t>(gr)] != 0) v -= R[gauge_row];
                return v;
            };
            for (int it = 0; it <= newton_max; ++it) {
                m.residual(u, d, Y, Rfull);
                Real rn = 0.0;
                for (int r = 0; r < n; ++r) rn = std::max(rn, std::abs(row_val(Rfull, sub[r])));
                if (rn < newton_tol) return true;
                if (it == newton_max) break;
                m.jacobian(u, d, Y, J);
                for (int r = 0; r < n; ++r)
                    for (int c2 = 0; c2 < n; ++c2) {
                        Real v = J(sub[r], sub[c2]);
                        if (rel_row[static_cast<std::size_t>(sub[r])] != 0)
                            v -= J(gauge_row, sub[c2]);
                        Asub(r, c2) = v;
                    }
                Eigen::PartialPivLU<Eigen::MatrixXd> alu(Asub);
                if (alu.rcond() < so.rcond_min) {
                    err = strfmt("network equations singular after event at t=%.4f (rcond %.2e)",
                                 t, alu.rcond());
                    return false;
                }
                for (int r = 0; r < n; ++r) RN[r] = row_val(Rfull, sub[r]);
                const Eigen::VectorXd dy = alu.solve(-RN);
                if (!dy.allFinite()) {
                    err = strfmt("network correction not finite at t=%.4f", t);
                    return false;
                }
                for (int r = 0; r < n; ++r) u[sub[r]] += dy[r];
            }
            err = strfmt("network solve stalled after event at t=%.4f", t);
            return false;
        }

        /// Weighted-RMS local error estimate of the accepted trapezoid step
        /// against a two-step explicit predictor (both second order).
        [[nodiscard]] Real error_estimate(Real dt, const Eigen::VectorXd& u_new,
                                          const Eigen::VectorXd& f_new) const {
            (void)f_new;
            if (!have_hist) return 0.0;
            const Real rho = dt / dt_prev;
            Real acc = 0.0;
            int cnt = 0;
            for (std::size_t r = 0; r < solve_idx.size(); ++r) {
                if (integrated[r] == 0) continue;
                const int i = solve_idx[r];
                const Real pred =
                    u[i] + dt * ((1.0 + 0.5 * rho) * f_prev[i] - 0.5 * rho * f_old[i]);
                const Real diff = (u_new[i] - pred) / 6.0;
                const Real w = 1.0 / (dhm_tol_v + dhm_tol_v * std::abs(u_new[i]));
                acc += (diff * w) * (diff * w);
                ++cnt;
            }
            return cnt > 0 ? std::sqrt(acc / cnt) : 0.0;
        }

        [[nodiscard]] bool fault_active() const { return !d.fault_shunts.empty(); }

        [[nodiscard]] Real policy_dt() const {
            switch (cfg.model) {
                case RunModel::Shm:
                    return (fault_active() || t - last_event_t < refine_window - 1e-12)
                               ? shm_dt_fault
                               : shm_dt;
                case RunModel::FastFrozen: return cfg.fast_dt;
                default: return std::clamp(dt_next, dhm_min, dhm_max);
            }
        }

        void drive(Trajectory& out) {
            DiscreteSupervisor sup(m);
            auto record = [&](Real tt) {
                if (cfg.record) out.points.push_back({tt, u});
                if (cfg.on_output) cfg.on_output(tt, u, d);
            };
            auto track_voltage = [&](Real tt) {
                const Eigen::VectorXd v = m.voltages(u);
                const Real vmin = v.minCoeff();
                out.min_voltage = std::min(out.min_voltage, vmin);
                if (vmin < so.v_collapse) {
                    if (!below_since) below_since = tt;
                    if (tt - *below_since >= so.collapse_hold - 1e-9) collapsed = true;
                } else {
                    below_since.reset();
                }
            };
            auto finish = [&](RunStatus st, Verdict vd, const std::string& note) {
                out.status = st;
                out.verdict = vd;
                out.note = note;
                out.end_time = t;
                out.disc_final = d;
                out.newton_iters = stat_iters;
                out.steps = stat_steps;
            };
            auto abort_verdict = [&](const std::string& why) {
                const Real vmin = m.voltages(u).minCoeff();
                const bool low_v = vmin < so.v_collapse || collapsed;
                const RunStatus st =
                    why.find("diverged") != std::string::npos ? RunStatus::Diverged
                                                              : RunStatus::Singular;
                finish(st, low_v ? Verdict::Collapse
                                 : (st == RunStatus::Diverged ? Verdict::Diverged
                                                              : Verdict::Singular),
                       why);
            };

            // t = 0: sample monitors, apply anything scheduled immediately
            if (monitors_enabled()) {
                sup.sample(t, u, d);
                track_voltage(t);
                const auto batch = sup.apply_due(t, u, d);
                if (!batch.empty()) {
                    Y = m.admittance(d);
                    std::string err;
                    if (!solve_algebraic(err)) {
                        record(t);
                        abort_verdict(err);
                        return;
                    }
                    for (const auto& ev : batch) out.events.push_back(ev);
                    out.batch_times.push_back(t);
                    out.batch_disc.push_back(d);
                    last_event_t = t;
                    lu_valid = false;
                    refresh_f();
                    sup.sample(t, u, d);
                }
            }
            record(t);

            Eigen::VectorXd u_new(m.n_total()), f_new(m.n_state());
            std::vector<Real> eta_new(eta_idx.size(), 0.0);
            const auto& winds = m.wind_sources();

            while (t < horizon - 1e-9) {
                // next mandatory stop
                Real t_stop = horizon;
                if (monitors_enabled()) {
                    t_stop = std::min(t_stop, next_grid(t, monitor_dt));
                    if (const auto ev = sup.next_event_time(); ev && *ev < t_stop)
                        t_stop = std::max(*ev, t + 1e-9);
                }
                if (cfg.record || cfg.on_output) t_stop = std::min(t_stop, next_grid(t, output_dt));

                Real dt = std::min(policy_dt(), t_stop - t);
                bool land = dt >= t_stop - t - 1e-12;
                if (land) dt = t_stop - t;

                // stochastic increments are drawn once per grid advance and
                // reused across retries of the same interval
                std::vector<Real> xi(eta_idx.size());
                for (std::size_t s = 0; s < xi.size(); ++s)
                    xi[s] = sigma_run[s] > 0.0 ? noise[s].normal() : 0.0;

                bool accepted = false;
                std::string err;
                for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
                    for (std::size_t s = 0; s < eta_idx.size(); ++s)
                        eta_new[s] = step_ou(u[eta_idx[s]], winds[s].alpha, sigma_run[s], dt,
                                             xi[s]);
                    if (try_step(dt, eta_new, u_new, f_new, err)) {
                        if (cfg.model == RunModel::Dhm || cfg.model == RunModel::Qss) {
                            const Real est = error_estimate(dt, u_new, f_new);
                            if (est > 1.0 && dt > dhm_min + 1e-15) {
                                dt = std::max(dhm_min,
                                              dt * std::max(Real(0.3),
                                                            Real(0.9) * std::pow(est, -1.0 / 3.0)));
                                land = false;
                                lu_valid = false;
                                continue;
                            }
                            dt_next = std::clamp(
                                dt * std::min(Real(2.0),
                                              std::max(Real(0.3),
                                                       est > 0.0 ? Real(0.9) *
                                                                       std::pow(est, -1.0 / 3.0)
                                                                 : Real(2.0))),
                                dhm_min, dhm_max);
                        }
                        accepted = true;
                    } else {
                        // shrink and retry with a fresh factorization
                        lu_valid = false;
                        if (cfg.model == RunModel::Dhm || cfg.model == RunModel::Qss) {
                            if (dt <= dhm_min + 1e-15) break;
                            dt = std::max(dhm_min, 0.25 * dt);
                            land = false;
                        } else {
                            // fixed-step modes: one retry in place, then
                            // bounded halving through rough transients
                            if (attempt == 0) continue;
                            if (dt <= policy_dt() / 64.0) break;
                            dt = 0.5 * dt;
                            land = false;
                        }
                    }
                }
                if (!accepted) {
                    abort_verdict(err.empty() ? "step failed" : err);
                    return;
                }

                f_old = f_prev;
                dt_prev = dt;
                have_hist = true;
                f_prev = f_new;
                u = u_new;
                t = land ? t_stop : t + dt;
                ++stat_steps;

                if (!u.allFinite() || u.cwiseAbs().maxCoeff() > 1e7) {
                    abort_verdict(strfmt("state diverged at t=%.4f", t));
                    return;
                }

                if (!land) continue;

                const bool on_monitor =
                    monitors_enabled() &&
                    std::abs(t - next_grid(t - 0.5 * monitor_dt, monitor_dt)) < 1e-7;
                bool recorded = false;
                if (on_monitor) {
                    sup.sample(t, u, d);
                    track_voltage(t);
                }
                if (monitors_enabled()) {
                    const auto batch = sup.apply_due(t, u, d);
                    if (!batch.empty()) {
                        Y = m.admittance(d);
                        std::string aerr;
                        if (!solve_algebraic(aerr)) {
                            record(t);
                            abort_verdict(aerr);
                            return;
                        }
                        for (const auto& ev : batch) out.events.push_back(ev);
                        out.batch_times.push_back(t);
                        out.batch_disc.push_back(d);
                        last_event_t = t;
                        lu_valid = false;
                        have_hist = false;
                        if (cfg.model == RunModel::Dhm || cfg.model == RunModel::Qss)
                            dt_next = std::max(dhm_min, Real(1e-3));
                        refresh_f();
                        sup.sample(t, u, d);
                        track_voltage(t);
                        record(t);
                        recorded = true;
                    }
                }
                const bool on_output = (cfg.record || cfg.on_output) &&
                                       std::abs(t - next_grid(t - 0.5 * output_dt, output_dt)) <
                                           1e-7;
                if (on_output && !recorded) record(t);

                if (collapsed && cfg.stop_on_collapse) {
                    finish(RunStatus::CollapseStopped, Verdict::Collapse,
                           strfmt("voltage below %.2f pu held %.1f s", so.v_collapse,
                                  so.collapse_hold));
                    return;
                }
            }

            // completed the horizon
            if (cfg.record && (out.points.empty() || out.points.back().t < t - 1e-9)) record(t);
            Verdict vd;
            std::string note;
            out.settle = m.settle_norm(u, d, Y);
            const Eigen::VectorXd v = m.voltages(u);
            const bool in_band = v.minCoeff() >= so.v_band_lo && v.maxCoeff() <= so.v_band_hi;
            if (collapsed) {
                vd = Verdict::Collapse;
                note = "voltage collapse detected";
            } else if (out.settle < so.settle_tol && in_band) {
                vd = Verdict::Stable;
            } else {
                vd = Verdict::Unsettled;
                note = strfmt("derivative norm %.3e, voltages [%.4f, %.4f]", out.settle,
                              v.minCoeff(), v.maxCoeff());
            }
            finish(RunStatus::Completed, vd, note);
        }
    };

    const SystemModel* model_;
    Eigen::VectorXd u0_;
    DiscreteState d0_;
};

}  // namespace windgrid
