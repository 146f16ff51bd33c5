#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "windgrid/case.hpp"
#include "windgrid/common.hpp"
#include "windgrid/network.hpp"
#include "windgrid/wind.hpp"

namespace windgrid {

// ===========================================================================
// State bookkeeping
// ===========================================================================

/// Time-scale class of a differential state. Slow states span the reduced
/// (quasi-steady) model; fast states are resolved only by the full models.
enum class StateClass { Fast, Slow };

struct StateInfo {
    std::string name;
    StateClass cls = StateClass::Fast;
};

/// Discrete configuration shared by every continuous evaluation: effective
/// branch table (taps and online status mutate here), active fault shunts,
/// and per-machine limiter arming. `revision` bumps on every change so
/// cached admittance matrices and Jacobian factorizations invalidate.
struct DiscreteState {
    std::vector<Branch> branches;
    std::vector<ShuntPatch> fault_shunts;
    std::vector<std::uint8_t> oxl_armed;  ///< indexed by machine slot
    int revision = 0;
};

/// Read-only view of the stacked unknown vector u = [states; alg] where
/// alg = [v_re(nbus); v_im(nbus); y_w(nwind)]. Rows of the residual vector
/// use the same layout, so row and column helpers coincide.
struct EvalView {
    const Eigen::VectorXd& u;
    const DiscreteState* disc = nullptr;
    int ns = 0;
    int nbus = 0;
    int nw = 0;

    [[nodiscard]] int n_total() const { return ns + 2 * nbus + nw; }

    [[nodiscard]] Real st(int i) const { return u[i]; }
    [[nodiscard]] Real vre(int b) const { return u[ns + b]; }
    [[nodiscard]] Real vim(int b) const { return u[ns + nbus + b]; }
    [[nodiscard]] Real yw(int s) const { return u[ns + 2 * nbus + s]; }
    [[nodiscard]] Real vmag(int b) const { return std::hypot(vre(b), vim(b)); }
    [[nodiscard]] Complex vbus(int b) const { return {vre(b), vim(b)}; }

    [[nodiscard]] int col_st(int i) const { return i; }
    [[nodiscard]] int col_vre(int b) const { return ns + b; }
    [[nodiscard]] int col_vim(int b) const { return ns + nbus + b; }
    [[nodiscard]] int col_yw(int s) const { return ns + 2 * nbus + s; }
    [[nodiscard]] int row_f(int i) const { return i; }
    [[nodiscard]] int row_gre(int b) const { return ns + b; }
    [[nodiscard]] int row_gim(int b) const { return ns + nbus + b; }
    [[nodiscard]] int row_gw(int s) const { return ns + 2 * nbus + s; }

    [[nodiscard]] bool oxl_armed(int slot) const {
        return disc != nullptr && slot >= 0 && slot < static_cast<int>(disc->oxl_armed.size()) &&
               disc->oxl_armed[static_cast<std::size_t>(slot)] != 0;
    }
};

// ===========================================================================
// Power-to-current injection helper
// ===========================================================================

/// Current injected at a bus by an apparent-power source, I = conj(S / V):
///   I_re = (P v_re + Q v_im) / v^2,  I_im = (P v_im - Q v_re) / v^2.
/// Below `kV2Floor` the 1/v^2 factor freezes so residuals stay finite when a
/// Newton iterate passes near the origin; partial derivatives stay consistent
/// with the frozen factor.
class PowerInjection {
public:
    static constexpr Real kV2Floor = 1e-4;

    PowerInjection(const EvalView& vw, int bus, Real P, Real Q)
        : vw_(&vw), bus_(bus), P_(P), Q_(Q), vre_(vw.vre(bus)), vim_(vw.vim(bus)) {
        const Real s_true = vre_ * vre_ + vim_ * vim_;
        floored_ = s_true < kV2Floor;
        s_ = floored_ ? kV2Floor : s_true;
        v_ = std::sqrt(std::max(s_true, Real(1e-12)));
    }

    [[nodiscard]] Real ire() const { return (P_ * vre_ + Q_ * vim_) / s_; }
    [[nodiscard]] Real iim() const { return (P_ * vim_ - Q_ * vre_) / s_; }

    void add_residual(Eigen::VectorXd& R) const {
        R[vw_->row_gre(bus_)] += ire();
        R[vw_->row_gim(bus_)] += iim();
    }

    /// Jacobian entries for a variable the power depends on (not this bus's
    /// voltage components).
    void d_dx(Eigen::MatrixXd& J, int col, Real dP, Real dQ) const {
        J(vw_->row_gre(bus_), col) += (dP * vre_ + dQ * vim_) / s_;
        J(vw_->row_gim(bus_), col) += (dP * vim_ - dQ * vre_) / s_;
    }

    /// Jacobian entries for this bus's voltage components, given dP/dv and
    /// dQ/dv (derivatives through the voltage magnitude).
    void d_dv(Eigen::MatrixXd& J, Real dP_dv, Real dQ_dv) const {
        const int rre = vw_->row_gre(bus_);
        const int rim = vw_->row_gim(bus_);
        const int cre = vw_->col_vre(bus_);
        const int cim = vw_->col_vim(bus_);
        // explicit v_re / v_im dependence at fixed P, Q, v^2
        J(rre, cre) += P_ / s_;
        J(rre, cim) += Q_ / s_;
        J(rim, cre) += -Q_ / s_;
        J(rim, cim) += P_ / s_;
        // magnitude chain of P and Q
        const Real dvre = vre_ / v_;
        const Real dvim = vim_ / v_;
        J(rre, cre) += (dP_dv * dvre * vre_ + dQ_dv * dvre * vim_) / s_;
        J(rre, cim) += (dP_dv * dvim * vre_ + dQ_dv * dvim * vim_) / s_;
        J(rim, cre) += (dP_dv * dvre * vim_ - dQ_dv * dvre * vre_) / s_;
        J(rim, cim) += (dP_dv * dvim * vim_ - dQ_dv * dvim * vre_) / s_;
        if (!floored_) {
            // 1/v^2 chain
            const Real ir = ire();
            const Real ii = iim();
            J(rre, cre) += -ir * 2.0 * vre_ / s_;
            J(rre, cim) += -ir * 2.0 * vim_ / s_;
            J(rim, cre) += -ii * 2.0 * vre_ / s_;
            J(rim, cim) += -ii * 2.0 * vim_ / s_;
        }
    }

private:
    const EvalView* vw_;
    int bus_;
    Real P_, Q_, vre_, vim_, s_, v_;
    bool floored_ = false;
};

// ===========================================================================
// Synchronous machine with optional exciter, governor, and field limiter
// ===========================================================================

/// One synchronous generator, packaged with its controls. State order:
///   delta, omega, [EMF states per model order], [E_f], [x_g1, x_g2, x_g3],
///   [x_oxl]
/// EMF states: order iii (E'q), iv (E'q, E'd), v (E'q, E''q, E''d),
/// vi (E'q, E'd, E''q, E''d); classical has none (constant EMF).
/// Machine d/q frame: v_d = v_re sin(d) - v_im cos(d),
/// v_q = v_re cos(d) + v_im sin(d); injected current maps back with the
/// inverse rotation.
class Machine {
public:
    Machine(const GenParams& g, const AvrParams* avr, const TgParams* tg, const OxlParams* oxl,
            int bus_index, Real omega_base)
        : g_(g), bus_(bus_index), wb_(omega_base) {
        if (avr != nullptr) avr_ = *avr;
        if (tg != nullptr) tg_ = *tg;
        if (oxl != nullptr) oxl_ = *oxl;
        if (g_.H <= 0.0) throw ParseError(strfmt("machine at bus %d requires H > 0", g_.bus));
        switch (g_.order) {
            case MachineOrder::Classical: n_mach_ = 2; break;
            case MachineOrder::III: n_mach_ = 3; break;
            case MachineOrder::IV: n_mach_ = 4; break;
            case MachineOrder::V: n_mach_ = 5; break;
            case MachineOrder::VI: n_mach_ = 6; break;
        }
        if (avr_ && g_.order == MachineOrder::Classical)
            throw ParseError(strfmt("machine at bus %d: exciter requires a field winding model "
                                    "(order iii or higher)", g_.bus));
        if (oxl_ && !avr_)
            throw ParseError(strfmt("machine at bus %d: field limiter requires an exciter", g_.bus));
        if (tg_ && tg_->droop <= 0.0)
            throw ParseError(strfmt("machine at bus %d requires governor droop > 0", g_.bus));
        rel_ef_ = n_mach_;
        rel_x1_ = rel_ef_ + (avr_ ? 1 : 0);
        rel_oxl_ = rel_x1_ + (tg_ ? 3 : 0);
        n_total_ = rel_oxl_ + (oxl_ ? 1 : 0);
    }

    void set_layout(int state_offset, int slot) {
        off_ = state_offset;
        slot_ = slot;
    }

    [[nodiscard]] int n_states() const { return n_total_; }
    [[nodiscard]] int bus() const { return bus_; }
    [[nodiscard]] int slot() const { return slot_; }
    [[nodiscard]] int offset() const { return off_; }
    [[nodiscard]] const GenParams& params() const { return g_; }
    [[nodiscard]] bool has_avr() const { return avr_.has_value(); }
    [[nodiscard]] bool has_tg() const { return tg_.has_value(); }
    [[nodiscard]] bool has_oxl() const { return oxl_.has_value(); }
    [[nodiscard]] const OxlParams& oxl_params() const { return *oxl_; }
    [[nodiscard]] Real vref() const { return vref_; }
    [[nodiscard]] Real pref() const { return pref_; }

    [[nodiscard]] std::vector<StateInfo> states() const {
        const std::string p = strfmt("gen%d.", g_.bus);
        std::vector<StateInfo> out;
        out.push_back({p + "delta", StateClass::Fast});
        out.push_back({p + "omega", StateClass::Fast});
        switch (g_.order) {
            case MachineOrder::Classical: break;
            case MachineOrder::III:
                out.push_back({p + "e1q", StateClass::Fast});
                break;
            case MachineOrder::IV:
                out.push_back({p + "e1q", StateClass::Fast});
                out.push_back({p + "e1d", StateClass::Fast});
                break;
            case MachineOrder::V:
                out.push_back({p + "e1q", StateClass::Fast});
                out.push_back({p + "e2q", StateClass::Fast});
                out.push_back({p + "e2d", StateClass::Fast});
                break;
            case MachineOrder::VI:
                out.push_back({p + "e1q", StateClass::Fast});
                out.push_back({p + "e1d", StateClass::Fast});
                out.push_back({p + "e2q", StateClass::Fast});
                out.push_back({p + "e2d", StateClass::Fast});
                break;
        }
        if (avr_) out.push_back({p + "ef", StateClass::Fast});
        if (tg_) {
            out.push_back({p + "tg1", StateClass::Fast});
            out.push_back({p + "tg2", StateClass::Fast});
            out.push_back({p + "tg3", StateClass::Slow});  // reheat storage
        }
        if (oxl_) out.push_back({p + "oxl", StateClass::Slow});
        return out;
    }

    /// Equilibrium states and setpoints from the power-flow operating point.
    void initialize(Complex V, Real P, Real Q, Eigen::VectorXd& u) {
        const Complex S{P, Q};
        const Complex I = std::conj(S / V);
        Real delta;
        if (g_.order == MachineOrder::Classical) {
            const Complex E = V + Complex(g_.ra, g_.xd1) * I;
            delta = std::arg(E);
            e1q_const_ = std::abs(E);
        } else {
            const Complex EQ = V + Complex(g_.ra, g_.xq) * I;
            delta = std::arg(EQ);
        }
        const Real s = std::sin(delta);
        const Real c = std::cos(delta);
        const Real vd = V.real() * s - V.imag() * c;
        const Real vq = V.real() * c + V.imag() * s;
        const Real id = I.real() * s - I.imag() * c;
        const Real iq = I.real() * c + I.imag() * s;

        u[ix_delta()] = delta;
        u[ix_omega()] = 1.0;
        Real ef0 = 0.0;
        if (g_.order != MachineOrder::Classical) {
            const Real e1q = vq + g_.ra * iq + g_.xd1 * id;
            u[ix_e1q()] = e1q;
            ef0 = e1q + (g_.xd - g_.xd1) * id;
            if (has_e1d()) u[ix_e1d()] = (g_.xq - g_.xq1) * iq;
            if (has_e2()) {
                u[ix_e2q()] = vq + g_.ra * iq + g_.xd2 * id;
                u[ix_e2d()] = vd + g_.ra * id - g_.xq2 * iq;
            }
        }
        ef0_ = ef0;

        // mechanical power balances electrical torque at omega = 1
        StatorVals sv = stator_from(delta, V.real(), V.imag(), u);
        pm0_ = sv.te;

        if (avr_) {
            if (ef0 < avr_->ef_min || ef0 > avr_->ef_max)
                throw NumericsError(strfmt("machine at bus %d: initial field voltage %.6g outside "
                                           "exciter limits [%g, %g]", g_.bus, ef0, avr_->ef_min,
                                           avr_->ef_max));
            u[ix_ef()] = ef0;
            vref_ = std::abs(V) + ef0 / avr_->Ka;
        }
        if (tg_) {
            if (pm0_ > tg_->pmax + 1e-12 || pm0_ < tg_->pmin - 1e-12)
                throw NumericsError(strfmt("machine at bus %d: dispatch %.6g pu outside governor "
                                           "limits [%g, %g]", g_.bus, pm0_, tg_->pmin, tg_->pmax));
            pref_ = pm0_;
            const Real k3 = tg_->T3 / tg_->Tc;
            const Real k5 = tg_->T4 / tg_->T5;
            u[ix_x1()] = pm0_;
            u[ix_x2()] = (1.0 - k3) * pm0_;
            u[ix_x3()] = (1.0 - k5) * pm0_;
        }
        if (oxl_) u[ix_oxl()] = 0.0;
    }

    void residual(const EvalView& vw, Eigen::VectorXd& R) const {
        const Real omega = vw.st(ix_omega());
        const StatorVals sv = stator(vw);

        R[ix_delta()] = wb_ * (omega - 1.0);
        R[ix_omega()] = (mech_power(vw) - sv.te - g_.D * (omega - 1.0)) / (2.0 * g_.H);

        const Real ef = avr_ ? vw.st(ix_ef()) : ef0_;
        switch (g_.order) {
            case MachineOrder::Classical: break;
            case MachineOrder::III:
            case MachineOrder::IV: {
                R[ix_e1q()] = (ef - vw.st(ix_e1q()) - (g_.xd - g_.xd1) * sv.id) / g_.Td01;
                if (g_.order == MachineOrder::IV)
                    R[ix_e1d()] = (-vw.st(ix_e1d()) + (g_.xq - g_.xq1) * sv.iq) / g_.Tq01;
                break;
            }
            case MachineOrder::V: {
                R[ix_e1q()] = (ef - vw.st(ix_e1q()) - (g_.xd - g_.xd1) * sv.id) / g_.Td01;
                R[ix_e2q()] =
                    (vw.st(ix_e1q()) - vw.st(ix_e2q()) - (g_.xd1 - g_.xd2) * sv.id) / g_.Td02;
                R[ix_e2d()] = (-vw.st(ix_e2d()) + (g_.xq - g_.xq2) * sv.iq) / g_.Tq02;
                break;
            }
            case MachineOrder::VI: {
                R[ix_e1q()] = (ef - vw.st(ix_e1q()) - (g_.xd - g_.xd1) * sv.id) / g_.Td01;
                R[ix_e1d()] = (-vw.st(ix_e1d()) + (g_.xq - g_.xq1) * sv.iq) / g_.Tq01;
                R[ix_e2q()] =
                    (vw.st(ix_e1q()) - vw.st(ix_e2q()) - (g_.xd1 - g_.xd2) * sv.id) / g_.Td02;
                R[ix_e2d()] =
                    (vw.st(ix_e1d()) - vw.st(ix_e2d()) + (g_.xq1 - g_.xq2) * sv.iq) / g_.Tq02;
                break;
            }
        }

        if (avr_) {
            const Real v = vw.vmag(bus_);
            const Real voxl = oxl_ ? vw.st(ix_oxl()) : 0.0;
            const Real raw = (avr_->Ka * (vref_ - v - voxl) - vw.st(ix_ef())) / avr_->Ta;
            R[ix_ef()] = avr_windup_blocked(vw.st(ix_ef()), raw) ? 0.0 : raw;
        }
        if (tg_) {
            const Real k3 = tg_->T3 / tg_->Tc;
            const Real k5 = tg_->T4 / tg_->T5;
            const Real pin = governor_input(omega).first;
            const Real x1 = vw.st(ix_x1());
            const Real x2 = vw.st(ix_x2());
            const Real x3 = vw.st(ix_x3());
            R[ix_x1()] = (pin - x1) / tg_->Ts;
            R[ix_x2()] = ((1.0 - k3) * x1 - x2) / tg_->Tc;
            R[ix_x3()] = ((1.0 - k5) * (x2 + k3 * x1) - x3) / tg_->T5;
        }
        if (oxl_) {
            const Real x = vw.st(ix_oxl());
            Real rhs;
            if (vw.oxl_armed(slot_)) {
                rhs = (field_current(vw) - oxl_->if_lim) / oxl_->T0;
                if (oxl_windup_blocked(x, rhs)) rhs = 0.0;
            } else {
                rhs = -x / oxl_->T0;
            }
            R[ix_oxl()] = rhs;
        }

        // network injection, back-rotated from the machine frame
        R[vw.row_gre(bus_)] += sv.id * sv.s + sv.iq * sv.c;
        R[vw.row_gim(bus_)] += -sv.id * sv.c + sv.iq * sv.s;
    }

    void jacobian(const EvalView& vw, Eigen::MatrixXd& J) const {
        const Real omega = vw.st(ix_omega());
        const StatorVals sv = stator(vw);
        const int cd = ix_delta();
        const int cw = ix_omega();
        const int cre = vw.col_vre(bus_);
        const int cim = vw.col_vim(bus_);
        const int ced = stator_ed_col();
        const int ceq = stator_eq_col();

        // columns every stator-coupled quantity depends on: delta, vre, vim,
        // and the EMF states feeding the stator (when they are states)
        struct Dep {
            int col;
            Real did, diq;
        };
        Dep deps[4];
        int ndep = 0;
        deps[ndep++] = {cd, sv.did_dd, sv.diq_dd};
        deps[ndep++] = {cre, sv.did_dvre, sv.diq_dvre};
        deps[ndep++] = {cim, sv.did_dvim, sv.diq_dvim};
        // EMF columns handled separately below (they also appear directly)

        J(ix_delta(), cw) += wb_;

        // rotor speed row: -(dTe + D d(omega))/2H + mechanical coupling
        const Real i2H = 1.0 / (2.0 * g_.H);
        const Real dte_did = sv.ed + (sv.xqe - sv.xde) * sv.iq;
        const Real dte_diq = sv.eq + (sv.xqe - sv.xde) * sv.id;
        for (int k = 0; k < ndep; ++k)
            J(ix_omega(), deps[k].col) += -(dte_did * deps[k].did + dte_diq * deps[k].diq) * i2H;
        if (ced >= 0)
            J(ix_omega(), ced) += -(dte_did * sv.did_ded + dte_diq * sv.diq_ded + sv.id) * i2H;
        if (ceq >= 0)
            J(ix_omega(), ceq) += -(dte_did * sv.did_deq + dte_diq * sv.diq_deq + sv.iq) * i2H;
        J(ix_omega(), cw) += -g_.D * i2H;
        if (tg_) {
            const Real k3 = tg_->T3 / tg_->Tc;
            const Real k5 = tg_->T4 / tg_->T5;
            J(ix_omega(), ix_x1()) += k5 * k3 * i2H;
            J(ix_omega(), ix_x2()) += k5 * i2H;
            J(ix_omega(), ix_x3()) += i2H;
        }

        // EMF rows
        auto chain_row = [&](int row, Real coef_id, Real coef_iq, Real scale) {
            // row gets (coef_id * d(id) + coef_iq * d(iq)) * scale over all deps
            for (int k = 0; k < ndep; ++k)
                J(row, deps[k].col) += (coef_id * deps[k].did + coef_iq * deps[k].diq) * scale;
            if (ced >= 0) J(row, ced) += (coef_id * sv.did_ded + coef_iq * sv.diq_ded) * scale;
            if (ceq >= 0) J(row, ceq) += (coef_id * sv.did_deq + coef_iq * sv.diq_deq) * scale;
        };
        const int cef = avr_ ? ix_ef() : -1;
        switch (g_.order) {
            case MachineOrder::Classical: break;
            case MachineOrder::III:
            case MachineOrder::IV: {
                const int r = ix_e1q();
                J(r, ix_e1q()) += -1.0 / g_.Td01;
                if (cef >= 0) J(r, cef) += 1.0 / g_.Td01;
                chain_row(r, -(g_.xd - g_.xd1), 0.0, 1.0 / g_.Td01);
                if (g_.order == MachineOrder::IV) {
                    const int rd = ix_e1d();
                    J(rd, ix_e1d()) += -1.0 / g_.Tq01;
                    chain_row(rd, 0.0, g_.xq - g_.xq1, 1.0 / g_.Tq01);
                }
                break;
            }
            case MachineOrder::V: {
                const int r1 = ix_e1q();
                J(r1, ix_e1q()) += -1.0 / g_.Td01;
                if (cef >= 0) J(r1, cef) += 1.0 / g_.Td01;
                chain_row(r1, -(g_.xd - g_.xd1), 0.0, 1.0 / g_.Td01);
                const int r2 = ix_e2q();
                J(r2, ix_e1q()) += 1.0 / g_.Td02;
                J(r2, ix_e2q()) += -1.0 / g_.Td02;
                chain_row(r2, -(g_.xd1 - g_.xd2), 0.0, 1.0 / g_.Td02);
                const int r3 = ix_e2d();
                J(r3, ix_e2d()) += -1.0 / g_.Tq02;
                chain_row(r3, 0.0, g_.xq - g_.xq2, 1.0 / g_.Tq02);
                break;
            }
            case MachineOrder::VI: {
                const int r1 = ix_e1q();
                J(r1, ix_e1q()) += -1.0 / g_.Td01;
                if (cef >= 0) J(r1, cef) += 1.0 / g_.Td01;
                chain_row(r1, -(g_.xd - g_.xd1), 0.0, 1.0 / g_.Td01);
                const int rd = ix_e1d();
                J(rd, ix_e1d()) += -1.0 / g_.Tq01;
                chain_row(rd, 0.0, g_.xq - g_.xq1, 1.0 / g_.Tq01);
                const int r2 = ix_e2q();
                J(r2, ix_e1q()) += 1.0 / g_.Td02;
                J(r2, ix_e2q()) += -1.0 / g_.Td02;
                chain_row(r2, -(g_.xd1 - g_.xd2), 0.0, 1.0 / g_.Td02);
                const int r3 = ix_e2d();
                J(r3, ix_e1d()) += 1.0 / g_.Tq02;
                J(r3, ix_e2d()) += -1.0 / g_.Tq02;
                chain_row(r3, 0.0, g_.xq1 - g_.xq2, 1.0 / g_.Tq02);
                break;
            }
        }

        if (avr_) {
            const Real v = std::max(vw.vmag(bus_), Real(1e-9));
            const Real voxl = oxl_ ? vw.st(ix_oxl()) : 0.0;
            const Real raw = (avr_->Ka * (vref_ - v - voxl) - vw.st(ix_ef())) / avr_->Ta;
            if (!avr_windup_blocked(vw.st(ix_ef()), raw)) {
                const int r = ix_ef();
                J(r, ix_ef()) += -1.0 / avr_->Ta;
                J(r, cre) += -avr_->Ka / avr_->Ta * (vw.vre(bus_) / v);
                J(r, cim) += -avr_->Ka / avr_->Ta * (vw.vim(bus_) / v);
                if (oxl_) J(r, ix_oxl()) += -avr_->Ka / avr_->Ta;
            }
        }
        if (tg_) {
            const Real k3 = tg_->T3 / tg_->Tc;
            const Real k5 = tg_->T4 / tg_->T5;
            const auto [pin, clamped] = governor_input(omega);
            (void)pin;
            J(ix_x1(), ix_x1()) += -1.0 / tg_->Ts;
            if (!clamped) J(ix_x1(), cw) += -1.0 / (tg_->droop * tg_->Ts);
            J(ix_x2(), ix_x1()) += (1.0 - k3) / tg_->Tc;
            J(ix_x2(), ix_x2()) += -1.0 / tg_->Tc;
            J(ix_x3(), ix_x1()) += (1.0 - k5) * k3 / tg_->T5;
            J(ix_x3(), ix_x2()) += (1.0 - k5) / tg_->T5;
            J(ix_x3(), ix_x3()) += -1.0 / tg_->T5;
        }
        if (oxl_) {
            const int r = ix_oxl();
            const Real x = vw.st(ix_oxl());
            if (vw.oxl_armed(slot_)) {
                const Real rhs = (field_current(vw) - oxl_->if_lim) / oxl_->T0;
                if (!oxl_windup_blocked(x, rhs) && g_.order != MachineOrder::Classical) {
                    // i_f = e1q + (xd - xd1) id
                    J(r, ix_e1q()) += 1.0 / oxl_->T0;
                    chain_row(r, g_.xd - g_.xd1, 0.0, 1.0 / oxl_->T0);
                }
            } else {
                J(r, r) += -1.0 / oxl_->T0;
            }
        }

        // injection rows: I_re = id s + iq c, I_im = -id c + iq s
        const int rre = vw.row_gre(bus_);
        const int rim = vw.row_gim(bus_);
        for (int k = 0; k < ndep; ++k) {
            J(rre, deps[k].col) += deps[k].did * sv.s + deps[k].diq * sv.c;
            J(rim, deps[k].col) += -deps[k].did * sv.c + deps[k].diq * sv.s;
        }
        if (ced >= 0) {
            J(rre, ced) += sv.did_ded * sv.s + sv.diq_ded * sv.c;
            J(rim, ced) += -sv.did_ded * sv.c + sv.diq_ded * sv.s;
        }
        if (ceq >= 0) {
            J(rre, ceq) += sv.did_deq * sv.s + sv.diq_deq * sv.c;
            J(rim, ceq) += -sv.did_deq * sv.c + sv.diq_deq * sv.s;
        }
        // explicit rotation dependence on delta
        J(rre, cd) += sv.id * sv.c - sv.iq * sv.s;
        J(rim, cd) += sv.id * sv.s + sv.iq * sv.c;
    }

    /// Field current proxy: E'q + (xd - x'd) i_d; the constant internal EMF
    /// for the classical model (no field winding access).
    [[nodiscard]] Real field_current(const EvalView& vw) const {
        if (g_.order == MachineOrder::Classical) return e1q_const_;
        const StatorVals sv = stator(vw);
        return vw.st(ix_e1q()) + (g_.xd - g_.xd1) * sv.id;
    }

    [[nodiscard]] Real mech_power(const EvalView& vw) const {
        if (!tg_) return pm0_;
        const Real k3 = tg_->T3 / tg_->Tc;
        const Real k5 = tg_->T4 / tg_->T5;
        return vw.st(ix_x3()) + k5 * (vw.st(ix_x2()) + k3 * vw.st(ix_x1()));
    }

    [[nodiscard]] Real electrical_torque(const EvalView& vw) const { return stator(vw).te; }

    [[nodiscard]] int ix_delta() const { return off_; }
    [[nodiscard]] int ix_omega() const { return off_ + 1; }
    [[nodiscard]] int ix_oxl() const { return off_ + rel_oxl_; }

private:
    struct StatorVals {
        Real s, c;
        Real vd, vq, id, iq, te;
        Real ed, eq, xde, xqe;
        Real did_dd, did_dvre, did_dvim, did_ded, did_deq;
        Real diq_dd, diq_dvre, diq_dvim, diq_ded, diq_deq;
    };

    [[nodiscard]] bool has_e1d() const {
        return g_.order == MachineOrder::IV || g_.order == MachineOrder::VI;
    }
    [[nodiscard]] bool has_e2() const {
        return g_.order == MachineOrder::V || g_.order == MachineOrder::VI;
    }
    [[nodiscard]] int ix_e1q() const { return off_ + 2; }
    [[nodiscard]] int ix_e1d() const { return off_ + 3; }
    [[nodiscard]] int ix_e2q() const { return off_ + (g_.order == MachineOrder::V ? 3 : 4); }
    [[nodiscard]] int ix_e2d() const { return off_ + (g_.order == MachineOrder::V ? 4 : 5); }
    [[nodiscard]] int ix_ef() const { return off_ + rel_ef_; }
    [[nodiscard]] int ix_x1() const { return off_ + rel_x1_; }
    [[nodiscard]] int ix_x2() const { return off_ + rel_x1_ + 1; }
    [[nodiscard]] int ix_x3() const { return off_ + rel_x1_ + 2; }

    /// Column index of the stator d-axis EMF when it is a state, else -1.
    [[nodiscard]] int stator_ed_col() const {
        switch (g_.order) {
            case MachineOrder::IV: return ix_e1d();
            case MachineOrder::V:
            case MachineOrder::VI: return ix_e2d();
            default: return -1;
        }
    }
    [[nodiscard]] int stator_eq_col() const {
        switch (g_.order) {
            case MachineOrder::Classical: return -1;
            case MachineOrder::III:
            case MachineOrder::IV: return ix_e1q();
            case MachineOrder::V:
            case MachineOrder::VI: return ix_e2q();
        }
        return -1;
    }

    [[nodiscard]] StatorVals stator(const EvalView& vw) const {
        return stator_from(vw.st(ix_delta()), vw.vre(bus_), vw.vim(bus_), vw.u);
    }

    [[nodiscard]] StatorVals stator_from(Real delta, Real vre, Real vim,
                                         const Eigen::VectorXd& u) const {
        StatorVals r{};
        r.s = std::sin(delta);
        r.c = std::cos(delta);
        switch (g_.order) {
            case MachineOrder::Classical:
                r.ed = 0.0;
                r.eq = e1q_const_;
                r.xde = g_.xd1;
                r.xqe = g_.xd1;
                break;
            case MachineOrder::III:
                r.ed = 0.0;
                r.eq = u[ix_e1q()];
                r.xde = g_.xd1;
                r.xqe = g_.xq;
                break;
            case MachineOrder::IV:
                r.ed = u[ix_e1d()];
                r.eq = u[ix_e1q()];
                r.xde = g_.xd1;
                r.xqe = g_.xq1;
                break;
            case MachineOrder::V:
            case MachineOrder::VI:
                r.ed = u[ix_e2d()];
                r.eq = u[ix_e2q()];
                r.xde = g_.xd2;
                r.xqe = g_.xq2;
                break;
        }
        r.vd = vre * r.s - vim * r.c;
        r.vq = vre * r.c + vim * r.s;
        const Real det = g_.ra * g_.ra + r.xde * r.xqe;
        const Real dd = r.ed - r.vd;
        const Real dq = r.eq - r.vq;
        r.id = (g_.ra * dd + r.xqe * dq) / det;
        r.iq = (-r.xde * dd + g_.ra * dq) / det;
        r.te = r.ed * r.id + r.eq * r.iq + (r.xqe - r.xde) * r.id * r.iq;

        const Real dvd_dd = r.vq;
        const Real dvq_dd = -r.vd;
        const Real did_dvd = -g_.ra / det;
        const Real did_dvq = -r.xqe / det;
        const Real diq_dvd = r.xde / det;
        const Real diq_dvq = -g_.ra / det;
        r.did_dd = did_dvd * dvd_dd + did_dvq * dvq_dd;
        r.diq_dd = diq_dvd * dvd_dd + diq_dvq * dvq_dd;
        r.did_dvre = did_dvd * r.s + did_dvq * r.c;
        r.did_dvim = did_dvd * (-r.c) + did_dvq * r.s;
        r.diq_dvre = diq_dvd * r.s + diq_dvq * r.c;
        r.diq_dvim = diq_dvd * (-r.c) + diq_dvq * r.s;
        r.did_ded = g_.ra / det;
        r.did_deq = r.xqe / det;
        r.diq_ded = -r.xde / det;
        r.diq_deq = g_.ra / det;
        return r;
    }

    /// Governor setpoint-plus-droop input, clamped to gate limits.
    [[nodiscard]] std::pair<Real, bool> governor_input(Real omega) const {
        Real pin = pref_ + (tg_->wref - omega) / tg_->droop;
        if (pin > tg_->pmax) return {tg_->pmax, true};
        if (pin < tg_->pmin) return {tg_->pmin, true};
        return {pin, false};
    }

    [[nodiscard]] bool avr_windup_blocked(Real ef, Real raw) const {
        return (ef >= avr_->ef_max && raw > 0.0) || (ef <= avr_->ef_min && raw < 0.0);
    }
    [[nodiscard]] static bool oxl_windup_blocked(Real x, Real raw) {
        return (x <= 0.0 && raw < 0.0);
    }

    GenParams g_;
    std::optional<AvrParams> avr_;
    std::optional<TgParams> tg_;
    std::optional<OxlParams> oxl_;
    int bus_ = 0;
    Real wb_ = 2.0 * kPi * 60.0;
    int off_ = 0;
    int slot_ = -1;
    int n_mach_ = 2, rel_ef_ = 0, rel_x1_ = 0, rel_oxl_ = 0, n_total_ = 0;
    Real e1q_const_ = 1.0;  ///< classical-model internal EMF
    Real pm0_ = 0.0;        ///< mechanical power when no governor
    Real ef0_ = 0.0;        ///< field voltage when no exciter
    Real pref_ = 0.0;
    Real vref_ = 1.0;
};

// ===========================================================================
// Self-restoring load
// ===========================================================================

/// Exponential-recovery load. A share (kp, kq) of the bus demand recovers
/// through first-order state dynamics:
///   x_p' = -x_p/Tp + P0 (v^as - v^at),   P_d = x_p/Tp + P0 v^at
/// and symmetrically for reactive power. After a sustained voltage step the
/// drawn power returns to P0 v^as. The static remainder of the bus demand is
/// injected by the network assembly, not by this device.
class RecoveryLoad {
public:
    RecoveryLoad(const ErlParams& p, int bus_index, Real p_case, Real q_case)
        : p_(p), bus_(bus_index), p_case_(p_case), q_case_(q_case) {}

    void set_layout(int state_offset) { off_ = state_offset; }

    [[nodiscard]] int n_states() const { return 2; }
    [[nodiscard]] int bus() const { return bus_; }
    [[nodiscard]] int offset() const { return off_; }
    [[nodiscard]] const ErlParams& params() const { return p_; }

    [[nodiscard]] std::vector<StateInfo> states() const {
        const std::string pre = strfmt("erl%d.", p_.bus);
        return {{pre + "xp", StateClass::Slow}, {pre + "xq", StateClass::Slow}};
    }

    void initialize(Complex V, Eigen::VectorXd& u) {
        const Real v0 = std::abs(V);
        P0_ = p_.kp * p_case_ / std::pow(v0, p_.alpha_s);
        Q0_ = p_.kq * q_case_ / std::pow(v0, p_.beta_s);
        u[off_] = p_.Tp * P0_ * (std::pow(v0, p_.alpha_s) - std::pow(v0, p_.alpha_t));
        u[off_ + 1] = p_.Tq * Q0_ * (std::pow(v0, p_.beta_s) - std::pow(v0, p_.beta_t));
    }

    void residual(const EvalView& vw, Eigen::VectorXd& R) const {
        const Real v = safe_v(vw);
        const Real xp = vw.st(off_);
        const Real xq = vw.st(off_ + 1);
        R[off_] = -xp / p_.Tp + P0_ * (std::pow(v, p_.alpha_s) - std::pow(v, p_.alpha_t));
        R[off_ + 1] = -xq / p_.Tq + Q0_ * (std::pow(v, p_.beta_s) - std::pow(v, p_.beta_t));
        const Real PL = xp / p_.Tp + P0_ * std::pow(v, p_.alpha_t);
        const Real QL = xq / p_.Tq + Q0_ * std::pow(v, p_.beta_t);
        PowerInjection inj(vw, bus_, -PL, -QL);
        inj.add_residual(R);
    }

    void jacobian(const EvalView& vw, Eigen::MatrixXd& J) const {
        const Real v = safe_v(vw);
        const Real xp = vw.st(off_);
        const Real xq = vw.st(off_ + 1);
        const int cre = vw.col_vre(bus_);
        const int cim = vw.col_vim(bus_);
        const Real dv_dre = vw.vre(bus_) / v;
        const Real dv_dim = vw.vim(bus_) / v;

        J(off_, off_) += -1.0 / p_.Tp;
        const Real dxp_dv = P0_ * (p_.alpha_s * std::pow(v, p_.alpha_s - 1.0) -
                                   p_.alpha_t * std::pow(v, p_.alpha_t - 1.0));
        J(off_, cre) += dxp_dv * dv_dre;
        J(off_, cim) += dxp_dv * dv_dim;
        J(off_ + 1, off_ + 1) += -1.0 / p_.Tq;
        const Real dxq_dv = Q0_ * (p_.beta_s * std::pow(v, p_.beta_s - 1.0) -
                                   p_.beta_t * std::pow(v, p_.beta_t - 1.0));
        J(off_ + 1, cre) += dxq_dv * dv_dre;
        J(off_ + 1, cim) += dxq_dv * dv_dim;

        const Real PL = xp / p_.Tp + P0_ * std::pow(v, p_.alpha_t);
        const Real QL = xq / p_.Tq + Q0_ * std::pow(v, p_.beta_t);
        PowerInjection inj(vw, bus_, -PL, -QL);
        inj.d_dx(J, off_, -1.0 / p_.Tp, 0.0);
        inj.d_dx(J, off_ + 1, 0.0, -1.0 / p_.Tq);
        inj.d_dv(J, -P0_ * p_.alpha_t * std::pow(v, p_.alpha_t - 1.0),
                 -Q0_ * p_.beta_t * std::pow(v, p_.beta_t - 1.0));
    }

    /// Power currently drawn by the recovering share.
    [[nodiscard]] Real drawn_power(const EvalView& vw) const {
        const Real v = safe_v(vw);
        return vw.st(off_) / p_.Tp + P0_ * std::pow(v, p_.alpha_t);
    }

private:
    [[nodiscard]] Real safe_v(const EvalView& vw) const {
        return std::max(vw.vmag(bus_), Real(1e-6));
    }

    ErlParams p_;
    int bus_ = 0;
    Real p_case_ = 0.0, q_case_ = 0.0;
    Real P0_ = 0.0, Q0_ = 0.0;
    int off_ = 0;
};

// ===========================================================================
// Wind plant (doubly-fed induction generator)
// ===========================================================================

/// Aggregated variable-speed wind turbine. States: rotor speed w_m, active
/// rotor current i_p (first-order tracking of the speed-power command), and
/// pitch angle theta_p. The reactive rotor current is an algebraic voltage-
/// droop law with limits frozen at initialization. All electrical relations
/// are written in the bus-voltage frame, where the stator phasor algebra
/// reduces to real arithmetic; the converter exports rotor-circuit power at
/// unity power factor, so total injection is assembled from (P, Q) directly.
class WindPlant {
public:
    WindPlant(const DfigParams& p, int bus_index) : p_(p), bus_(bus_index) {
        xss_ = p_.xs + p_.xmu;
        xrr_ = p_.xr + p_.xmu;
        dd_ = p_.rs * p_.rs + xss_ * xss_;
        if (p_.xmu <= 0.0)
            throw ParseError(strfmt("wind plant at bus %d requires xmu > 0", p_.bus));
    }

    void set_layout(int state_offset, int source_index) {
        off_ = state_offset;
        src_ = source_index;
    }

    [[nodiscard]] int n_states() const { return 3; }
    [[nodiscard]] int bus() const { return bus_; }
    [[nodiscard]] int offset() const { return off_; }
    [[nodiscard]] int source_index() const { return src_; }
    [[nodiscard]] const DfigParams& params() const { return p_; }

    [[nodiscard]] std::vector<StateInfo> states() const {
        const std::string pre = strfmt("dfig%d.", p_.bus);
        return {{pre + "wm", StateClass::Fast},
                {pre + "ip", StateClass::Fast},
                {pre + "pitch", StateClass::Fast}};
    }

    /// Equilibrium from the power-flow point and the median wind speed:
    /// rotor speed from the aerodynamic balance on the falling branch of the
    /// power curve (with pitch engaged above synchronous speed), rotor
    /// currents from a 2x2 Newton on the electrical power balance.
    void initialize(Complex V, Real P, Real Q, Real y0, Real base_mva, Real freq,
                    Eigen::VectorXd& u) {
        const Real base_scale = p_.sn / base_mva;
        pmax_sys_ = p_.pmax * base_scale;
        pmin_sys_ = p_.pmin * base_scale;
        const Real qmax_sys = p_.qmax * base_scale;
        const Real qmin_sys = p_.qmin * base_scale;
        if (P > pmax_sys_ - 1e-9 || P < pmin_sys_ + 1e-9)
            throw NumericsError(strfmt("wind plant at bus %d: dispatch %.6g pu outside converter "
                                       "limits [%g, %g]", p_.bus, P, pmin_sys_, pmax_sys_));
        if (Q > qmax_sys + 1e-9 || Q < qmin_sys - 1e-9)
            throw NumericsError(strfmt("wind plant at bus %d: reactive dispatch %.6g pu outside "
                                       "limits [%g, %g]", p_.bus, Q, qmin_sys, qmax_sys));

        aw_ = p_.ng * 0.5 * 1.225 * kPi * p_.R * p_.R / (base_mva * 1e6);
        ktsr_ = p_.etaGB * (2.0 * 2.0 * kPi * freq / p_.np) * p_.R;

        // rotor speed: scan for the power-curve peak, then bisect on the
        // falling branch where the mechanical equilibrium is stable; the
        // aerodynamic input must cover the dispatch plus copper losses, so
        // alternate with the electrical solve until both balances close
        auto paero = [&](Real w) { return aero_power(y0, w, pitch_law(w)); };
        Real w_pk = 0.2, f_pk = paero(0.2);
        for (int i = 1; i <= 280; ++i) {
            const Real w = 0.2 + 2.8 * i / 280.0;
            const Real f = paero(w);
            if (f > f_pk) {
                f_pk = f;
                w_pk = w;
            }
        }
        if (f_pk < P)
            throw NumericsError(strfmt("wind plant at bus %d: median wind %.4g m/s cannot supply "
                                       "dispatch %.6g pu (peak %.6g pu)", p_.bus, y0, P, f_pk));
        const Real v0 = std::abs(V);
        vref_ = v0;
        Real a = P * xss_ / (p_.xmu * v0);
        Real b = -(Q * xss_ + v0 * v0) / (p_.xmu * v0);
        Real target = P;
        for (int outer = 0; outer < 40; ++outer) {
            if (paero(w_pk) < target)
                throw NumericsError(strfmt("wind plant at bus %d: median wind %.4g m/s cannot "
                                           "cover dispatch plus losses (%.6g pu)", p_.bus, y0,
                                           target));
            Real lo = w_pk, hi = w_pk;
            while (paero(hi) > target && hi < 6.0) hi += 0.1;
            for (int i = 0; i < 200; ++i) {
                const Real mid = 0.5 * (lo + hi);
                (paero(mid) >= target ? lo : hi) = mid;
            }
            wm0_ = 0.5 * (lo + hi);

            // rotor currents from the electrical balance at (v0, wm0)
            for (int it = 0; it < 50; ++it) {
                const Elec e = elec(v0, a, b, wm0_);
                const Real f1 = e.p_tot - P;
                const Real f2 = e.q_tot - Q;
                if (std::max(std::abs(f1), std::abs(f2)) < 1e-13) break;
                const Real det = e.dp_da * e.dq_db - e.dp_db * e.dq_da;
                if (std::abs(det) < 1e-14)
                    throw NumericsError(strfmt("wind plant at bus %d: rotor current solve is "
                                               "singular", p_.bus));
                a -= (f1 * e.dq_db - f2 * e.dp_db) / det;
                b -= (f2 * e.dp_da - f1 * e.dq_da) / det;
            }
            const Elec e = elec(v0, a, b, wm0_);
            const Real needed = e.p_s + p_.rs * e.i1sq + (1.0 - wm0_) * p_.xmu * e.kk;
            if (std::abs(needed - target) < 1e-13) break;
            target = needed;
        }
        theta0_ = pitch_law(wm0_);
        c_mppt_ = P / (wm0_ * wm0_ * wm0_);
        p_disp_ = P;
        a0_ = a;
        b0_ = b;
        // reactive-current limits frozen at the initial active current
        blo_ = b_for_q(qmax_sys, v0, a);
        bhi_ = b_for_q(qmin_sys, v0, a);

        u[off_] = wm0_;
        u[off_ + 1] = a0_;
        u[off_ + 2] = theta0_;
    }

    void residual(const EvalView& vw, Eigen::VectorXd& R) const {
        const Real wm = vw.st(off_);
        const Real a = vw.st(off_ + 1);
        const Real th = vw.st(off_ + 2);
        const Real y = vw.yw(src_);
        const Real v = vw.vmag(bus_);
        const Real b = reactive_current(v).first;
        const Elec e = elec(v, a, b, wm);
        const Real te = (e.p_s + p_.rs * e.i1sq + (1.0 - wm) * p_.xmu * e.kk) / wm;
        const Real tm = aero_power(y, wm, th) / wm;

        R[off_] = (tm - te) / (2.0 * p_.Hm);
        R[off_ + 1] = (current_command(wm, v).first - a) / p_.Teps;
        R[off_ + 2] = (p_.Kp * std::max(Real(0), wm - 1.0) - th) / p_.Tp;

        PowerInjection inj(vw, bus_, e.p_tot, e.q_tot);
        inj.add_residual(R);
    }

    void jacobian(const EvalView& vw, Eigen::MatrixXd& J) const {
        const Real wm = vw.st(off_);
        const Real a = vw.st(off_ + 1);
        const Real th = vw.st(off_ + 2);
        const Real y = vw.yw(src_);
        const Real v = vw.vmag(bus_);
        const auto [b, b_clamped] = reactive_current(v);
        const Real db_dv = b_clamped ? 0.0 : p_.Kv;
        const Elec e = elec(v, a, b, wm);
        const int cw = off_, ca = off_ + 1, cth = off_ + 2;
        const int cre = vw.col_vre(bus_);
        const int cim = vw.col_vim(bus_);
        const int cy = vw.col_yw(src_);
        const Real vs = std::max(v, Real(1e-9));
        const Real dv_dre = vw.vre(bus_) / vs;
        const Real dv_dim = vw.vim(bus_) / vs;

        // electromagnetic torque te = (p_s + rs |I1|^2 + s xmu K)/wm, s = 1 - wm
        const Real s = 1.0 - wm;
        const Real num = e.p_s + p_.rs * e.i1sq + s * p_.xmu * e.kk;
        const Real te = num / wm;
        const Real dte_da = (e.dps_da + p_.rs * e.di1sq_da + s * p_.xmu * e.dk_da) / wm;
        const Real dte_db = (e.dps_db + p_.rs * e.di1sq_db + s * p_.xmu * e.dk_db) / wm;
        const Real dte_dvraw = (e.dps_dv + p_.rs * e.di1sq_dv + s * p_.xmu * e.dk_dv) / wm;
        const Real dte_dv = dte_dvraw + dte_db * db_dv;
        const Real dte_dw = -p_.xmu * e.kk / wm - te / wm;

        // aerodynamic torque tm = P_aero(y, wm, th)/wm
        const Aero ae = aero(y, wm, th);
        const Real dtm_dw = (ae.dpw_dw * wm - ae.pw) / (wm * wm);
        const Real dtm_dth = ae.dpw_dth / wm;
        const Real dtm_dy = ae.dpw_dy / wm;

        const Real i2H = 1.0 / (2.0 * p_.Hm);
        J(off_, cw) += (dtm_dw - dte_dw) * i2H;
        J(off_, ca) += -dte_da * i2H;
        J(off_, cth) += dtm_dth * i2H;
        J(off_, cre) += -dte_dv * dv_dre * i2H;
        J(off_, cim) += -dte_dv * dv_dim * i2H;
        J(off_, cy) += dtm_dy * i2H;

        // current command tracking
        const auto [acmd, dacmd] = current_command(wm, v);
        (void)acmd;
        J(off_ + 1, ca) += -1.0 / p_.Teps;
        J(off_ + 1, cw) += dacmd.dw / p_.Teps;
        J(off_ + 1, cre) += dacmd.dv * dv_dre / p_.Teps;
        J(off_ + 1, cim) += dacmd.dv * dv_dim / p_.Teps;

        // pitch servo
        J(off_ + 2, cth) += -1.0 / p_.Tp;
        if (wm > 1.0) J(off_ + 2, cw) += p_.Kp / p_.Tp;

        // injection: P_tot(v, a, b(v), wm), Q_tot(v, a, b(v))
        PowerInjection inj(vw, bus_, e.p_tot, e.q_tot);
        inj.d_dx(J, ca, e.dp_da, e.dq_da);
        inj.d_dx(J, cw, e.dp_dw, 0.0);
        inj.d_dv(J, e.dp_dv + e.dp_db * db_dv, e.dq_dv + e.dq_db * db_dv);
    }

    [[nodiscard]] Real electrical_power(const EvalView& vw) const {
        const Real v = vw.vmag(bus_);
        const Real b = reactive_current(v).first;
        return elec(v, vw.st(off_ + 1), b, vw.st(off_)).p_tot;
    }

    [[nodiscard]] Real mech_power(const EvalView& vw) const {
        return aero_power(vw.yw(src_), vw.st(off_), vw.st(off_ + 2));
    }

private:
    /// Electrical quantities and their partials in the voltage frame.
    /// a = active rotor current, b = reactive rotor current.
    struct Elec {
        Real p_s, q_tot, p_tot, i1sq, kk;
        Real dps_da, dps_db, dps_dv;
        Real dq_da, dq_db, dq_dv;
        Real dp_da, dp_db, dp_dv, dp_dw;
        Real di1sq_da, di1sq_db, di1sq_dv;
        Real dk_da, dk_db, dk_dv;
    };

    [[nodiscard]] Elec elec(Real v, Real a, Real b, Real wm) const {
        Elec e{};
        const Real xmu = p_.xmu, rs = p_.rs, rr = p_.rr;
        const Real vb = v + xmu * b;
        e.p_s = (xss_ * xmu * v * a - rs * v * v - rs * xmu * v * b) / dd_;
        e.dps_da = xss_ * xmu * v / dd_;
        e.dps_db = -rs * xmu * v / dd_;
        e.dps_dv = (xss_ * xmu * a - 2.0 * rs * v - rs * xmu * b) / dd_;
        const Real q_s = -(xss_ * v * v + xss_ * xmu * v * b + rs * xmu * v * a) / dd_;
        e.q_tot = q_s;
        e.dq_da = -rs * xmu * v / dd_;
        e.dq_db = -xss_ * xmu * v / dd_;
        e.dq_dv = -(2.0 * xss_ * v + xss_ * xmu * b + rs * xmu * a) / dd_;
        const Real i1a = (rs * vb - xss_ * xmu * a) / dd_;
        const Real i1b = -(xss_ * vb + rs * xmu * a) / dd_;
        const Real di1a_dv = rs / dd_, di1a_da = -xss_ * xmu / dd_, di1a_db = rs * xmu / dd_;
        const Real di1b_dv = -xss_ / dd_, di1b_da = -rs * xmu / dd_, di1b_db = -xss_ * xmu / dd_;
        e.i1sq = i1a * i1a + i1b * i1b;
        e.di1sq_da = 2.0 * (i1a * di1a_da + i1b * di1b_da);
        e.di1sq_db = 2.0 * (i1a * di1a_db + i1b * di1b_db);
        e.di1sq_dv = 2.0 * (i1a * di1a_dv + i1b * di1b_dv);
        e.kk = i1b * a - i1a * b;
        e.dk_da = di1b_da * a + i1b - di1a_da * b;
        e.dk_db = di1b_db * a - di1a_db * b - i1a;
        e.dk_dv = di1b_dv * a - di1a_dv * b;
        const Real slip = 1.0 - wm;
        const Real i2sq = a * a + b * b;
        // converter export of rotor-circuit power (lossless link, unity pf)
        const Real p_gsc = -rr * i2sq + slip * xmu * e.kk;
        e.p_tot = e.p_s + p_gsc;
        e.dp_da = e.dps_da - 2.0 * rr * a + slip * xmu * e.dk_da;
        e.dp_db = e.dps_db - 2.0 * rr * b + slip * xmu * e.dk_db;
        e.dp_dv = e.dps_dv + slip * xmu * e.dk_dv;
        e.dp_dw = -xmu * e.kk;
        return e;
    }

    struct Aero {
        Real pw, dpw_dw, dpw_dth, dpw_dy;
    };

    /// Smooth over the whole operating range; negative values act as a
    /// braking torque at extreme tip-speed ratios. The rotor speed is
    /// floored away from the pole of the tip-speed expression.
    [[nodiscard]] Aero aero(Real y, Real wm, Real th) const {
        Aero a{};
        const Real ys = std::max(y, Real(1e-6));
        const bool w_floored = wm < 0.05;
        const Real ws = w_floored ? Real(0.05) : wm;
        const Real lam = ktsr_ * ws / ys;
        const Real den1 = lam + 0.08 * th;
        const Real den2 = th * th * th + 1.0;
        const Real uinv = 1.0 / den1 - 0.035 / den2;
        const Real ex = std::exp(-12.5 * uinv);
        const Real cp = 0.22 * (116.0 * uinv - 0.4 * th - 5.0) * ex;
        const Real dcp_du = 0.22 * ex * (116.0 - 12.5 * (116.0 * uinv - 0.4 * th - 5.0));
        const Real dcp_dth_direct = 0.22 * ex * (-0.4);
        const Real du_dlam = -1.0 / (den1 * den1);
        const Real du_dth = -0.08 / (den1 * den1) + 0.105 * th * th / (den2 * den2);
        const Real dlam_dw = w_floored ? 0.0 : ktsr_ / ys;
        const Real dlam_dy = -ktsr_ * ws / (ys * ys);
        const Real y3 = ys * ys * ys;
        a.pw = aw_ * cp * y3;
        a.dpw_dw = aw_ * y3 * dcp_du * du_dlam * dlam_dw;
        a.dpw_dth = aw_ * y3 * (dcp_du * du_dth + dcp_dth_direct);
        a.dpw_dy = aw_ * (3.0 * ys * ys * cp + y3 * dcp_du * du_dlam * dlam_dy);
        return a;
    }

    [[nodiscard]] Real aero_power(Real y, Real wm, Real th) const { return aero(y, wm, th).pw; }

    [[nodiscard]] Real pitch_law(Real wm) const { return p_.Kp * std::max(Real(0), wm - 1.0); }

    /// Reactive rotor current: voltage droop around the initial point,
    /// clamped to the converter's reactive range. Returns (b, clamped).
    [[nodiscard]] std::pair<Real, bool> reactive_current(Real v) const {
        const Real b = b0_ - p_.Kv * (vref_ - v);
        if (b < blo_) return {blo_, true};
        if (b > bhi_) return {bhi_, true};
        return {b, false};
    }

    struct CmdPartials {
        Real dw = 0.0, dv = 0.0;
    };

    /// Active current command from the speed-power tracking law.
    [[nodiscard]] std::pair<Real, CmdPartials> current_command(Real wm, Real v) const {
        CmdPartials d;
        Real pstar = c_mppt_ * wm * wm * wm;
        Real dpstar_dw = 3.0 * c_mppt_ * wm * wm;
        if (pstar > pmax_sys_) {
            pstar = pmax_sys_;
            dpstar_dw = 0.0;
        } else if (pstar < 0.0) {
            pstar = 0.0;
            dpstar_dw = 0.0;
        }
        const Real vfl = 0.05;
        const Real vv = std::max(v, vfl);
        const Real g = xss_ / p_.xmu;
        const Real cmd = a0_ + g * (pstar - p_disp_) / vv;
        d.dw = g * dpstar_dw / vv;
        d.dv = (v > vfl) ? -g * (pstar - p_disp_) / (vv * vv) : 0.0;
        return {cmd, d};
    }

    /// Reactive current that delivers a target Q at voltage v and active
    /// current a (exact; Q is linear in b).
    [[nodiscard]] Real b_for_q(Real q, Real v, Real a) const {
        return -(q * dd_ + xss_ * v * v + p_.rs * p_.xmu * v * a) / (xss_ * p_.xmu * v);
    }

    DfigParams p_;
    int bus_ = 0;
    int off_ = 0;
    int src_ = -1;
    Real xss_ = 0.0, xrr_ = 0.0, dd_ = 1.0;
    Real aw_ = 0.0, ktsr_ = 1.0, c_mppt_ = 0.0;
    Real wm0_ = 1.0, theta0_ = 0.0, a0_ = 0.0, b0_ = 0.0;
    Real vref_ = 1.0, p_disp_ = 0.0;
    Real pmax_sys_ = 1.0, pmin_sys_ = 0.0;
    Real blo_ = -10.0, bhi_ = 10.0;
};

}  // namespace windgrid
