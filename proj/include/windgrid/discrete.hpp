#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "windgrid/case.hpp"
#include "windgrid/common.hpp"
#include "windgrid/system_model.hpp"

namespace windgrid {

/// One application of the tap rule. Strict comparisons on both the deadband
/// and the position guard; the guard tests the current position only, so a
/// step from just inside a limit lands exactly on it when the step size
/// divides the remaining range.
[[nodiscard]] inline Real ltc_step(Real n, Real v, const LtcParams& p) {
    if (v > p.v0 + p.d && n < p.nmax) return n + p.step;
    if (v < p.v0 - p.d && n > p.nmin) return n - p.step;
    return n;
}

/// One discrete transition, as logged. `value` carries the new tap position
/// for tap moves and the fault reactance for fault applications.
struct EventRecord {
    Real t = 0.0;
    std::string kind;    ///< trip | fault_on | fault_off | tap | oxl_on | oxl_off
    std::string target;  ///< "6-13", "bus6", "gen1", ...
    Real value = 0.0;

    [[nodiscard]] bool same_as(const EventRecord& o, Real ttol = 1e-9) const {
        return kind == o.kind && target == o.target && std::abs(t - o.t) < ttol &&
               std::abs(value - o.value) < 1e-12;
    }
};

/// Tracks the discrete automata: the disturbance schedule, per-transformer
/// tap delay clocks, and per-machine field-limiter arming clocks. All clocks
/// advance only at monitor samples, so transition times depend on the
/// monitor grid and the sampled trajectory, never on integrator step sizes.
class DiscreteSupervisor {
public:
    explicit DiscreteSupervisor(const SystemModel& model)
        : model_(&model), cs_(&model.system_case()) {
        ltc_.resize(cs_->ltcs.size());
        for (std::size_t i = 0; i < cs_->ltcs.size(); ++i)
            ltc_[i].ctrl_bus_index = cs_->bus_index(cs_->ltcs[i].ctrl_bus);
        for (const auto& m : model.machines())
            if (m.has_oxl())
                oxl_.push_back(OxlClock{m.slot(),
                                        cs_->buses[static_cast<std::size_t>(m.bus())].id,
                                        m.oxl_params(), {}, {}});
    }

    /// Absolute time of the earliest pending transition, if any.
    [[nodiscard]] std::optional<Real> next_event_time() const {
        std::optional<Real> t;
        auto take = [&](Real cand) {
            if (!t || cand < *t) t = cand;
        };
        if (sched_ < cs_->events.size()) take(cs_->events[sched_].t);
        for (std::size_t i = 0; i < ltc_.size(); ++i)
            if (auto due = ltc_due(i)) take(*due);
        for (const auto& o : oxl_) {
            if (o.over_start && !o.active) take(*o.over_start + o.p.delay);
            if (o.deact_due) take(*o.deact_due);
        }
        return t;
    }

    /// Update all violation clocks from the sampled state. Called on the
    /// monitor grid and immediately after each applied event batch.
    void sample(Real t, const Eigen::VectorXd& u, const DiscreteState& d) {
        const int ns = model_->n_state();
        const int nbus = model_->n_bus();
        for (std::size_t i = 0; i < ltc_.size(); ++i) {
            const LtcParams& p = cs_->ltcs[i];
            const int b = ltc_[i].ctrl_bus_index;
            const Real v = std::hypot(u[ns + b], u[ns + nbus + b]);
            const bool violated = v > p.v0 + p.d || v < p.v0 - p.d;
            if (!violated) {
                ltc_[i].violation_start.reset();
                ltc_[i].last_move.reset();
            } else if (!ltc_[i].violation_start) {
                ltc_[i].violation_start = t;
            }
        }
        for (auto& o : oxl_) {
            const Real ifc = model_->field_current(o.slot, u, d);
            if (!o.active) {
                if (ifc > o.p.if_lim) {
                    if (!o.over_start) o.over_start = t;
                } else {
                    o.over_start.reset();
                }
            } else {
                if (ifc < 0.98 * o.p.if_lim && !o.deact_due) o.deact_due = t;
            }
        }
    }

    /// Apply every transition due at time t. Tie order: scheduled
    /// disturbances first, then limiter transitions, then tap moves, each in
    /// case order. All decisions read the same pre-application state u.
    std::vector<EventRecord> apply_due(Real t, const Eigen::VectorXd& u, DiscreteState& d) {
        std::vector<EventRecord> out;
        const Real tol = 1e-9;

        while (sched_ < cs_->events.size() && cs_->events[sched_].t <= t + tol) {
            const Disturbance& ev = cs_->events[sched_++];
            switch (ev.kind) {
                case DisturbanceKind::LineTrip: {
                    Branch& br = working_branch(d, ev.from, ev.to);
                    if (br.online) {
                        br.online = false;
                        out.push_back({t, "trip", strfmt("%d-%d", ev.from, ev.to), 0.0});
                    }
                    break;
                }
                case DisturbanceKind::FaultApply: {
                    d.fault_shunts.push_back(
                        {cs_->bus_index(ev.bus), Complex(0.0, -1.0 / ev.x_fault)});
                    out.push_back({t, "fault_on", strfmt("bus%d", ev.bus), ev.x_fault});
                    break;
                }
                case DisturbanceKind::FaultClear: {
                    const int bi = cs_->bus_index(ev.bus);
                    auto it = std::find_if(d.fault_shunts.begin(), d.fault_shunts.end(),
                                           [&](const ShuntPatch& s) { return s.bus_index == bi; });
                    if (it != d.fault_shunts.end()) d.fault_shunts.erase(it);
                    out.push_back({t, "fault_off", strfmt("bus%d", ev.bus), 0.0});
                    break;
                }
            }
        }

        for (auto& o : oxl_) {
            if (!o.active && o.over_start && t + tol >= *o.over_start + o.p.delay) {
                o.active = true;
                o.over_start.reset();
                d.oxl_armed[static_cast<std::size_t>(o.slot)] = 1;
                out.push_back({t, "oxl_on", strfmt("gen%d", o.bus), o.p.if_lim});
            } else if (o.active && o.deact_due && t + tol >= *o.deact_due) {
                o.active = false;
                o.deact_due.reset();
                d.oxl_armed[static_cast<std::size_t>(o.slot)] = 0;
                out.push_back({t, "oxl_off", strfmt("gen%d", o.bus), 0.0});
            }
        }

        const int ns = model_->n_state();
        const int nbus = model_->n_bus();
        for (std::size_t i = 0; i < ltc_.size(); ++i) {
            const auto due = ltc_due(i);
            if (!due || t + tol < *due) continue;
            const LtcParams& p = cs_->ltcs[i];
            const int b = ltc_[i].ctrl_bus_index;
            const Real v = std::hypot(u[ns + b], u[ns + nbus + b]);
            Branch& br = working_branch(d, p.from, p.to);
            const Real moved = ltc_step(br.tap, v, p);
            // the delay clock advances even when the position guard blocks
            // the move, so a saturated transformer re-checks every Tk
            ltc_[i].last_move = t;
            if (moved != br.tap) {
                br.tap = moved;
                out.push_back({t, "tap", strfmt("%d-%d", p.from, p.to), moved});
            }
        }

        if (!out.empty()) ++d.revision;
        return out;
    }

private:
    struct LtcClock {
        int ctrl_bus_index = 0;
        std::optional<Real> violation_start;
        std::optional<Real> last_move;  ///< within the current violation episode
    };
    struct OxlClock {
        int slot;
        int bus;
        OxlParams p;
        std::optional<Real> over_start;
        std::optional<Real> deact_due;
        bool active = false;
    };

    [[nodiscard]] std::optional<Real> ltc_due(std::size_t i) const {
        if (!ltc_[i].violation_start) return std::nullopt;
        const LtcParams& p = cs_->ltcs[i];
        if (ltc_[i].last_move) return *ltc_[i].last_move + p.Tk;
        return *ltc_[i].violation_start + p.T0;
    }

    [[nodiscard]] static Branch& working_branch(DiscreteState& d, int from, int to) {
        for (Branch& br : d.branches)
            if (br.from == from && br.to == to) return br;
        throw NumericsError(strfmt("no working branch %d-%d", from, to));
    }

    const SystemModel* model_;
    const PowerSystemCase* cs_;
    std::size_t sched_ = 0;
    std::vector<LtcClock> ltc_;
    std::vector<OxlClock> oxl_;
};

}  // namespace windgrid
