#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "windgrid/case.hpp"
#include "windgrid/common.hpp"
#include "windgrid/devices.hpp"
#include "windgrid/network.hpp"
#include "windgrid/power_flow.hpp"
#include "windgrid/wind.hpp"

namespace windgrid {

/// Layout of the stacked unknown vector u = [states; v_re; v_im; y_w] and
/// the matching residual rows [f; g_network; g_wind].
struct VariableMap {
    std::vector<StateInfo> states;
    std::vector<int> fast_states;   ///< indices into the state block
    std::vector<int> slow_states;
    std::vector<int> eta_states;    ///< wind OU states (subset of fast)
    std::vector<int> delta_states;  ///< machine rotor angles (subset of fast)
    int nbus = 0;
    int nwind = 0;

    [[nodiscard]] int n_state() const { return static_cast<int>(states.size()); }
    [[nodiscard]] int n_alg() const { return 2 * nbus + nwind; }
    [[nodiscard]] int n_total() const { return n_state() + n_alg(); }

    [[nodiscard]] std::string name_of(int row) const {
        const int ns = n_state();
        if (row < ns) return states[static_cast<std::size_t>(row)].name;
        if (row < ns + nbus) return strfmt("g_re[bus#%d]", row - ns);
        if (row < ns + 2 * nbus) return strfmt("g_im[bus#%d]", row - ns - nbus);
        return strfmt("g_wind[%d]", row - ns - 2 * nbus);
    }
};

/// The assembled differential-algebraic model: devices, network, and wind
/// coupling. Device setpoints are fixed by initialize(); afterwards the
/// model is immutable and safe to share across threads.
class SystemModel {
public:
    explicit SystemModel(const PowerSystemCase& cs) : cs_(cs) {
        cs_.validate();
        winds_ = build_wind_sources(cs_);
        const int nbus = static_cast<int>(cs_.buses.size());

        for (const auto& g : cs_.gens) {
            const AvrParams* avr = nullptr;
            const TgParams* tg = nullptr;
            const OxlParams* oxl = nullptr;
            for (const auto& a : cs_.avrs)
                if (a.gen_bus == g.bus) avr = &a;
            for (const auto& t : cs_.tgs)
                if (t.gen_bus == g.bus) tg = &t;
            for (const auto& o : cs_.oxls)
                if (o.gen_bus == g.bus) oxl = &o;
            machines_.emplace_back(g, avr, tg, oxl, cs_.bus_index(g.bus),
                                   2.0 * kPi * cs_.sim.freq);
        }
        for (const auto& d : cs_.dfigs) plants_.emplace_back(d, cs_.bus_index(d.bus));
        for (const auto& e : cs_.erls) {
            const Bus& b = cs_.buses[static_cast<std::size_t>(cs_.bus_index(e.bus))];
            loads_.emplace_back(e, cs_.bus_index(e.bus), b.p_load, b.q_load);
        }

        // static load shares: full bus demand minus any recovering share
        p_static_.assign(static_cast<std::size_t>(nbus), 0.0);
        q_static_.assign(static_cast<std::size_t>(nbus), 0.0);
        for (int b = 0; b < nbus; ++b) {
            p_static_[static_cast<std::size_t>(b)] = cs_.buses[static_cast<std::size_t>(b)].p_load;
            q_static_[static_cast<std::size_t>(b)] = cs_.buses[static_cast<std::size_t>(b)].q_load;
        }
        for (const auto& l : loads_) {
            p_static_[static_cast<std::size_t>(l.bus())] *= (1.0 - l.params().kp);
            q_static_[static_cast<std::size_t>(l.bus())] *= (1.0 - l.params().kq);
        }

        // state layout: machines, wind plants, recovery loads, then OU states
        int off = 0;
        int slot = 0;
        for (auto& m : machines_) {
            m.set_layout(off, slot++);
            for (const auto& si : m.states()) push_state(si, off);
        }
        for (auto& p : plants_) {
            int src = -1;
            for (std::size_t s = 0; s < winds_.size(); ++s)
                if (winds_[s].bus == p.params().bus) src = static_cast<int>(s);
            p.set_layout(off, src);
            for (const auto& si : p.states()) push_state(si, off);
        }
        for (auto& l : loads_) {
            l.set_layout(off);
            for (const auto& si : l.states()) push_state(si, off);
        }
        eta_off_ = off;
        for (const auto& w : winds_) {
            map_.eta_states.push_back(off);
            push_state({strfmt("wind%d.eta", w.bus), StateClass::Fast}, off);
        }

        map_.nbus = nbus;
        map_.nwind = static_cast<int>(winds_.size());
        for (const auto& m : machines_) map_.delta_states.push_back(m.ix_delta());
    }

    [[nodiscard]] const PowerSystemCase& system_case() const { return cs_; }
    [[nodiscard]] const VariableMap& map() const { return map_; }
    [[nodiscard]] int n_state() const { return map_.n_state(); }
    [[nodiscard]] int n_alg() const { return map_.n_alg(); }
    [[nodiscard]] int n_total() const { return map_.n_total(); }
    [[nodiscard]] int n_bus() const { return map_.nbus; }
    [[nodiscard]] int n_wind() const { return map_.nwind; }
    [[nodiscard]] const std::vector<Machine>& machines() const { return machines_; }
    [[nodiscard]] const std::vector<WindPlant>& plants() const { return plants_; }
    [[nodiscard]] const std::vector<RecoveryLoad>& loads() const { return loads_; }
    [[nodiscard]] const std::vector<WindSource>& wind_sources() const { return winds_; }
    [[nodiscard]] int eta_state(int source) const { return eta_off_ + source; }

    [[nodiscard]] EvalView view(const Eigen::VectorXd& u, const DiscreteState& d) const {
        return EvalView{u, &d, map_.n_state(), map_.nbus, map_.nwind};
    }

    /// Discrete state matching the case as filed: all branches as given, no
    /// faults, limiters disarmed.
    [[nodiscard]] DiscreteState base_discrete() const {
        DiscreteState d;
        d.branches = cs_.branches;
        d.oxl_armed.assign(machines_.size(), 0);
        return d;
    }

    [[nodiscard]] Eigen::MatrixXcd admittance(const DiscreteState& d) const {
        return build_admittance(cs_, d.branches, d.fault_shunts);
    }

    struct InitResult {
        Eigen::VectorXd u0;
        DiscreteState d0;
        PowerFlowResult pf;
    };

    /// Equilibrium initialization: power flow, then closed-form device
    /// states. Throws if any device cannot realize its operating point; the
    /// assembled residual is verified to be numerically zero.
    InitResult initialize() {
        InitResult out;
        out.d0 = base_discrete();
        const Eigen::MatrixXcd Y = admittance(out.d0);
        // the equilibrium must sit well inside the per-step Newton tolerance,
        // so the integrator holds it without drift
        out.pf = solve_power_flow(cs_, Y, 1e-11, 60);
        if (!out.pf.converged)
            throw NumericsError(strfmt("power flow did not converge (mismatch %.3e after %d "
                                       "iterations)", out.pf.max_mismatch, out.pf.iterations));

        Eigen::VectorXd u0 = Eigen::VectorXd::Zero(n_total());
        for (int b = 0; b < map_.nbus; ++b) {
            const Complex V = out.pf.voltage(b);
            u0[n_state() + b] = V.real();
            u0[n_state() + map_.nbus + b] = V.imag();
        }
        for (std::size_t s = 0; s < winds_.size(); ++s) {
            const Real eta0 = winds_[s].eta0_pinned ? winds_[s].eta0 : 0.0;
            u0[eta_state(static_cast<int>(s))] = eta0;
            u0[n_state() + 2 * map_.nbus + static_cast<int>(s)] = winds_[s].speed(eta0);
        }
        // a machine and a wind plant may share a bus: the plant produces its
        // scheduled power at unity power factor and the machine absorbs the
        // remainder (including any slack adjustment)
        std::vector<Real> plant_p(static_cast<std::size_t>(map_.nbus), 0.0);
        std::vector<char> has_machine(static_cast<std::size_t>(map_.nbus), 0);
        for (const auto& p : plants_)
            plant_p[static_cast<std::size_t>(p.bus())] += p.params().pg;
        for (const auto& m : machines_) has_machine[static_cast<std::size_t>(m.bus())] = 1;
        for (auto& m : machines_) {
            const int b = m.bus();
            m.initialize(out.pf.voltage(b),
                         out.pf.p_gen[static_cast<std::size_t>(b)] -
                             plant_p[static_cast<std::size_t>(b)],
                         out.pf.q_gen[static_cast<std::size_t>(b)], u0);
        }
        for (auto& p : plants_) {
            const int b = p.bus();
            const Real y0 = u0[n_state() + 2 * map_.nbus + p.source_index()];
            const Real q0 = has_machine[static_cast<std::size_t>(b)]
                                ? 0.0
                                : out.pf.q_gen[static_cast<std::size_t>(b)];
            p.initialize(out.pf.voltage(b), p.params().pg, q0, y0, cs_.sim.base_mva,
                         cs_.sim.freq, u0);
        }
        for (auto& l : loads_) l.initialize(out.pf.voltage(l.bus()), u0);

        Eigen::VectorXd R(n_total());
        residual(u0, out.d0, Y, R);
        int worst = 0;
        const Real err = R.cwiseAbs().maxCoeff(&worst);
        if (err > 1e-8)
            throw NumericsError(strfmt("initialization left residual %.3e at %s", err,
                                       map_.name_of(worst).c_str()));
        out.u0 = std::move(u0);
        return out;
    }

    /// Full residual [f; g] at u under discrete state d with admittance Y.
    void residual(const Eigen::VectorXd& u, const DiscreteState& d, const Eigen::MatrixXcd& Y,
                  Eigen::VectorXd& R) const {
        R.setZero(n_total());
        const EvalView vw = view(u, d);
        for (const auto& m : machines_) m.residual(vw, R);
        for (const auto& p : plants_) p.residual(vw, R);
        for (const auto& l : loads_) l.residual(vw, R);
        // OU drift rows; the stochastic forcing is applied by the integrator
        for (std::size_t s = 0; s < winds_.size(); ++s)
            R[eta_state(static_cast<int>(s))] = -winds_[s].alpha * u[eta_state(static_cast<int>(s))];
        // static load injections
        for (int b = 0; b < map_.nbus; ++b) {
            const Real P = p_static_[static_cast<std::size_t>(b)];
            const Real Q = q_static_[static_cast<std::size_t>(b)];
            if (P != 0.0 || Q != 0.0) PowerInjection(vw, b, -P, -Q).add_residual(R);
        }
        // network balance: injections minus Y V
        const int ns = n_state();
        for (int i = 0; i < map_.nbus; ++i) {
            Complex yv{0.0, 0.0};
            for (int j = 0; j < map_.nbus; ++j) yv += Y(i, j) * vw.vbus(j);
            R[ns + i] -= yv.real();
            R[ns + map_.nbus + i] -= yv.imag();
        }
        // wind speed coupling
        for (std::size_t s = 0; s < winds_.size(); ++s) {
            const int si = static_cast<int>(s);
            R[vw.row_gw(si)] = vw.yw(si) - winds_[s].speed(u[eta_state(si)]);
        }
    }

    /// Structural Jacobian d[f; g]/d[states; alg], dense.
    void jacobian(const Eigen::VectorXd& u, const DiscreteState& d, const Eigen::MatrixXcd& Y,
                  Eigen::MatrixXd& J) const {
        J.setZero(n_total(), n_total());
        const EvalView vw = view(u, d);
        for (const auto& m : machines_) m.jacobian(vw, J);
        for (const auto& p : plants_) p.jacobian(vw, J);
        for (const auto& l : loads_) l.jacobian(vw, J);
        for (std::size_t s = 0; s < winds_.size(); ++s) {
            const int si = static_cast<int>(s);
            J(eta_state(si), eta_state(si)) += -winds_[s].alpha;
        }
        for (int b = 0; b < map_.nbus; ++b) {
            const Real P = p_static_[static_cast<std::size_t>(b)];
            const Real Q = q_static_[static_cast<std::size_t>(b)];
            if (P != 0.0 || Q != 0.0) PowerInjection(vw, b, -P, -Q).d_dv(J, 0.0, 0.0);
        }
        const int ns = n_state();
        for (int i = 0; i < map_.nbus; ++i) {
            for (int j = 0; j < map_.nbus; ++j) {
                const Real G = Y(i, j).real();
                const Real B = Y(i, j).imag();
                if (G == 0.0 && B == 0.0) continue;
                J(ns + i, vw.col_vre(j)) -= G;
                J(ns + i, vw.col_vim(j)) -= -B;
                J(ns + map_.nbus + i, vw.col_vre(j)) -= B;
                J(ns + map_.nbus + i, vw.col_vim(j)) -= G;
            }
        }
        for (std::size_t s = 0; s < winds_.size(); ++s) {
            const int si = static_cast<int>(s);
            J(vw.row_gw(si), vw.col_yw(si)) += 1.0;
            J(vw.row_gw(si), eta_state(si)) -= winds_[s].speed_slope(u[eta_state(si)]);
        }
    }

    /// Derivative norm used by the stability verdict: machine angle rows are
    /// measured against the inertia-weighted mean speed, so a uniform
    /// frequency offset (the rotational symmetry) does not register.
    [[nodiscard]] Real settle_norm(const Eigen::VectorXd& u, const DiscreteState& d,
                                   const Eigen::MatrixXcd& Y) const {
        Eigen::VectorXd R(n_total());
        residual(u, d, Y, R);
        if (!machines_.empty()) {
            Real hw = 0.0, hsum = 0.0;
            for (const auto& m : machines_) {
                hw += m.params().H * u[m.ix_omega()];
                hsum += m.params().H;
            }
            const Real wcoi = hw / hsum;
            const Real wb = 2.0 * kPi * cs_.sim.freq;
            for (const auto& m : machines_) R[m.ix_delta()] = wb * (u[m.ix_omega()] - wcoi);
        }
        return R.head(n_state()).cwiseAbs().maxCoeff();
    }

    /// All bus voltage magnitudes.
    [[nodiscard]] Eigen::VectorXd voltages(const Eigen::VectorXd& u) const {
        Eigen::VectorXd v(map_.nbus);
        for (int b = 0; b < map_.nbus; ++b)
            v[b] = std::hypot(u[n_state() + b], u[n_state() + map_.nbus + b]);
        return v;
    }

    [[nodiscard]] Real field_current(int machine_slot, const Eigen::VectorXd& u,
                                     const DiscreteState& d) const {
        return machines_[static_cast<std::size_t>(machine_slot)].field_current(view(u, d));
    }

    /// Net active power a wind plant injects at its bus, system base.
    [[nodiscard]] Real plant_power(int plant_slot, const Eigen::VectorXd& u,
                                   const DiscreteState& d) const {
        return plants_[static_cast<std::size_t>(plant_slot)].electrical_power(view(u, d));
    }

private:
    void push_state(const StateInfo& si, int& off) {
        const int idx = static_cast<int>(map_.states.size());
        map_.states.push_back(si);
        (si.cls == StateClass::Fast ? map_.fast_states : map_.slow_states).push_back(idx);
        ++off;
    }

    PowerSystemCase cs_;
    std::vector<WindSource> winds_;
    std::vector<Machine> machines_;
    std::vector<WindPlant> plants_;
    std::vector<RecoveryLoad> loads_;
    std::vector<Real> p_static_, q_static_;
    VariableMap map_;
    int eta_off_ = 0;
};

}  // namespace windgrid
