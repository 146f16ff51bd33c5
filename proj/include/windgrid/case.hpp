#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "windgrid/common.hpp"
#include "windgrid/wind.hpp"

namespace windgrid {

// ===========================================================================
// Data model
// ===========================================================================

enum class BusKind { Slack, PV, PQ };

struct Bus {
    int id = 0;
    BusKind kind = BusKind::PQ;
    Real v_set = 1.0;     ///< voltage setpoint (slack and PV buses)
    Real theta_set = 0.0; ///< angle setpoint [rad] (slack bus)
    Real p_load = 0.0;    ///< total active load [pu]
    Real q_load = 0.0;    ///< total reactive load [pu]
    Real g_shunt = 0.0;
    Real b_shunt = 0.0;
};

struct Branch {
    int from = 0;
    int to = 0;
    Real r = 0.0;
    Real x = 0.0;
    Real b = 0.0;    ///< total line charging susceptance
    Real tap = 1.0;  ///< off-nominal ratio on the from side
    bool online = true;
};

enum class MachineOrder { Classical, III, IV, V, VI };

struct GenParams {
    int bus = 0;
    MachineOrder order = MachineOrder::Classical;
    Real pg = 0.0; ///< active dispatch [pu] (ignored on the slack bus)
    Real H = 0.0;
    Real D = 0.0;
    Real ra = 0.0;
    Real xd = 0.0, xq = 0.0;
    Real xd1 = 0.0, xq1 = 0.0; ///< transient reactances
    Real xd2 = 0.0, xq2 = 0.0; ///< subtransient reactances
    Real Td01 = 0.0, Tq01 = 0.0;
    Real Td02 = 0.0, Tq02 = 0.0;
};

struct AvrParams {
    int gen_bus = 0;
    Real Ka = 200.0;
    Real Ta = 0.02;
    Real ef_min = -5.0;
    Real ef_max = 5.0;
};

struct TgParams {
    int gen_bus = 0;
    Real wref = 1.0;
    Real droop = 0.02;
    Real pmax = 1.2;
    Real pmin = 0.0;
    Real Ts = 0.1;  ///< governor time constant
    Real Tc = 0.45; ///< servo time constant
    Real T3 = 0.0;  ///< transient gain time constant
    Real T4 = 12.0; ///< power fraction time constant
    Real T5 = 50.0; ///< reheat time constant
};

struct OxlParams {
    int gen_bus = 0;
    Real if_lim = 0.0; ///< field current limit [pu]
    Real T0 = 10.0;    ///< takeover integrator time constant
    Real v_max = 100.0;
    Real delay = 50.0; ///< arming delay after a continuous over-limit excursion
};

struct ErlParams {
    int bus = 0;
    Real kp = 1.0, kq = 1.0; ///< fraction of the bus load made dynamic
    Real Tp = 10.0, Tq = 10.0;
    Real alpha_s = 1.0, alpha_t = 1.5;
    Real beta_s = 2.0, beta_t = 2.5;
};

struct DfigParams {
    int bus = 0;
    Real pg = 0.0; ///< active dispatch [pu, system base]
    Real rs = 0.01, xs = 0.1, rr = 0.01, xr = 0.08, xmu = 3.0;
    Real Hm = 3.0;
    Real Kp = 10.0, Tp = 3.0;   ///< pitch control gain / time constant
    Real Kv = 10.0;             ///< proportional voltage-support gain
    Real Teps = 0.01;           ///< rotor current command filter time constant
    Real R = 75.0;              ///< rotor radius [m]
    Real np = 4.0;              ///< number of poles
    Real nb = 3.0;              ///< number of blades (metadata)
    Real etaGB = 0.0112;        ///< gearbox ratio (turbine speed / machine speed)
    Real ng = 1.0;              ///< number of aggregated machines
    Real sn = 100.0;            ///< aggregate machine rating [MVA]
    Real pmax = 2.0, pmin = -1.0, qmax = 2.0, qmin = -1.0;
};

struct LtcParams {
    int from = 0, to = 0;  ///< tapped branch (tap on the from side)
    int ctrl_bus = 0;      ///< controlled bus
    Real v0 = 1.0;         ///< deadband center
    Real d = 0.01;         ///< deadband half-width
    Real step = 0.025;     ///< tap step
    Real nmax = 1.2, nmin = 0.7;
    Real T0 = 30.0;        ///< initial delay after violation onset
    Real Tk = 10.0;        ///< delay between subsequent moves
};

struct WindParams {
    int bus = 0; ///< must carry a wind plant
    Real alpha = 0.2;
    Real sigma = 0.1;
    std::string dist = "weibull";
    std::map<std::string, Real> dist_params;
    bool eta0_pinned = false;
    Real eta0 = 0.0;
};

enum class DisturbanceKind { LineTrip, FaultApply, FaultClear };

struct Disturbance {
    Real t = 0.0;
    DisturbanceKind kind = DisturbanceKind::LineTrip;
    int from = 0, to = 0; ///< line trips
    int bus = 0;          ///< faults
    Real x_fault = 0.01;  ///< fault shunt reactance [pu]
};

struct SimOptions {
    Real horizon = 300.0;
    Real base_mva = 100.0;
    Real freq = 60.0;
    Real shm_step = 0.01;
    Real shm_step_fault = 0.005; ///< fixed step while a fault is on / right after events
    Real refine_window = 1.0;    ///< post-event window integrated at the fault-on step
    Real dhm_tol = 1e-6;
    Real dhm_min_step = 1e-3;
    Real dhm_max_step = 0.5;
    Real output_dt = 0.05;
    Real monitor_dt = 0.05;
    Real newton_tol = 1e-8;
    int newton_max_iter = 25;
    Real rcond_min = 1e-12;
    Real v_band_lo = 0.8;
    Real v_band_hi = 1.1;
    Real v_collapse = 0.6;
    Real collapse_hold = 1.0;
    Real settle_tol = 1e-4;
};

struct PowerSystemCase {
    std::string name;
    SimOptions sim;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<GenParams> gens;
    std::vector<AvrParams> avrs;
    std::vector<TgParams> tgs;
    std::vector<OxlParams> oxls;
    std::vector<ErlParams> erls;
    std::vector<DfigParams> dfigs;
    std::vector<LtcParams> ltcs;
    std::vector<WindParams> winds;
    std::vector<Disturbance> events;

    [[nodiscard]] int bus_index(int id) const {
        for (size_t i = 0; i < buses.size(); ++i)
            if (buses[i].id == id) return static_cast<int>(i);
        throw ParseError(strfmt("unknown bus id %d", id));
    }

    [[nodiscard]] int branch_index(int from, int to) const {
        for (size_t i = 0; i < branches.size(); ++i) {
            const Branch& br = branches[i];
            if ((br.from == from && br.to == to) || (br.from == to && br.to == from))
                return static_cast<int>(i);
        }
        throw ParseError(strfmt("unknown branch %d-%d", from, to));
    }

    [[nodiscard]] bool has_bus(int id) const {
        for (const Bus& b : buses)
            if (b.id == id) return true;
        return false;
    }

    void validate() const;
};

// ===========================================================================
// Validation
// ===========================================================================

inline void PowerSystemCase::validate() const {
    if (buses.empty()) throw ParseError("case has no buses");
    int slack_count = 0;
    std::set<int> ids;
    for (const Bus& b : buses) {
        if (!ids.insert(b.id).second)
            throw ParseError(strfmt("duplicate bus id %d", b.id));
        if (b.kind == BusKind::Slack) ++slack_count;
    }
    if (slack_count != 1)
        throw ParseError(strfmt("case requires exactly one slack bus, found %d", slack_count));

    for (const Branch& br : branches) {
        if (!has_bus(br.from) || !has_bus(br.to))
            throw ParseError(strfmt("branch %d-%d references a missing bus", br.from, br.to));
        if (br.x == 0.0)
            throw ParseError(strfmt("branch %d-%d has zero reactance", br.from, br.to));
        if (br.tap <= 0.0)
            throw ParseError(strfmt("branch %d-%d has non-positive tap", br.from, br.to));
    }

    auto require_bus = [&](int id, const char* what) {
        if (!has_bus(id)) throw ParseError(strfmt("%s references missing bus %d", what, id));
    };
    std::set<int> gen_buses, dfig_buses;
    for (const GenParams& g : gens) {
        require_bus(g.bus, "generator");
        if (!gen_buses.insert(g.bus).second)
            throw ParseError(strfmt("more than one generator at bus %d", g.bus));
        if (g.H <= 0.0) throw ParseError(strfmt("generator at bus %d requires H > 0", g.bus));
        if (g.xd1 <= 0.0) throw ParseError(strfmt("generator at bus %d requires xd1 > 0", g.bus));
        if (g.order != MachineOrder::Classical) {
            if (g.xd <= 0.0 || g.Td01 <= 0.0)
                throw ParseError(strfmt("generator at bus %d requires xd and Td01", g.bus));
        }
        if (g.order == MachineOrder::IV || g.order == MachineOrder::V || g.order == MachineOrder::VI) {
            if (g.xq <= 0.0)
                throw ParseError(strfmt("generator at bus %d requires xq", g.bus));
        }
        if (g.order == MachineOrder::IV || g.order == MachineOrder::VI) {
            if (g.xq1 <= 0.0 || g.Tq01 <= 0.0)
                throw ParseError(strfmt("generator at bus %d requires xq1 and Tq01", g.bus));
        }
        if (g.order == MachineOrder::V || g.order == MachineOrder::VI) {
            if (g.xd2 <= 0.0 || g.xq2 <= 0.0 || g.Td02 <= 0.0 || g.Tq02 <= 0.0)
                throw ParseError(strfmt("generator at bus %d requires subtransient data", g.bus));
        }
    }
    for (const DfigParams& d : dfigs) {
        require_bus(d.bus, "wind plant");
        if (!dfig_buses.insert(d.bus).second)
            throw ParseError(strfmt("more than one wind plant at bus %d", d.bus));
        if (d.Hm <= 0.0 || d.xmu <= 0.0)
            throw ParseError(strfmt("wind plant at bus %d requires Hm and xmu", d.bus));
    }

    auto require_gen = [&](int bus, const char* what) {
        if (!gen_buses.count(bus))
            throw ParseError(strfmt("%s references bus %d which has no generator", what, bus));
    };
    std::set<int> seen;
    for (const AvrParams& a : avrs) {
        require_gen(a.gen_bus, "AVR");
        if (!seen.insert(a.gen_bus).second)
            throw ParseError(strfmt("more than one AVR at bus %d", a.gen_bus));
        if (a.Ta <= 0.0 || a.Ka <= 0.0)
            throw ParseError(strfmt("AVR at bus %d requires Ka > 0 and Ta > 0", a.gen_bus));
    }
    seen.clear();
    for (const TgParams& t : tgs) {
        require_gen(t.gen_bus, "turbine governor");
        if (!seen.insert(t.gen_bus).second)
            throw ParseError(strfmt("more than one governor at bus %d", t.gen_bus));
        if (t.droop <= 0.0 || t.Ts <= 0.0 || t.Tc <= 0.0 || t.T4 < 0.0 || t.T5 <= 0.0)
            throw ParseError(strfmt("governor at bus %d has invalid time constants", t.gen_bus));
    }
    seen.clear();
    for (const OxlParams& o : oxls) {
        require_gen(o.gen_bus, "over-excitation limiter");
        if (!seen.insert(o.gen_bus).second)
            throw ParseError(strfmt("more than one limiter at bus %d", o.gen_bus));
        if (o.if_lim <= 0.0 || o.T0 <= 0.0 || o.delay < 0.0)
            throw ParseError(strfmt("limiter at bus %d has invalid parameters", o.gen_bus));
    }
    seen.clear();
    for (const ErlParams& e : erls) {
        require_bus(e.bus, "recovery load");
        if (!seen.insert(e.bus).second)
            throw ParseError(strfmt("more than one recovery load at bus %d", e.bus));
        if (e.kp < 0.0 || e.kp > 1.0 || e.kq < 0.0 || e.kq > 1.0)
            throw ParseError(strfmt("recovery load at bus %d requires kp, kq in [0,1]", e.bus));
        if (e.Tp <= 0.0 || e.Tq <= 0.0)
            throw ParseError(strfmt("recovery load at bus %d requires Tp, Tq > 0", e.bus));
    }
    for (const LtcParams& l : ltcs) {
        (void)branch_index(l.from, l.to); // throws if missing
        require_bus(l.ctrl_bus, "tap changer");
        if (l.d <= 0.0 || l.step <= 0.0 || l.nmax <= l.nmin || l.T0 < 0.0 || l.Tk <= 0.0)
            throw ParseError(strfmt("tap changer %d-%d has invalid parameters", l.from, l.to));
    }
    std::set<int> wind_buses;
    for (const WindParams& w : winds) {
        if (!dfig_buses.count(w.bus))
            throw ParseError(strfmt("wind source references bus %d which has no wind plant", w.bus));
        if (!wind_buses.insert(w.bus).second)
            throw ParseError(strfmt("more than one wind source at bus %d", w.bus));
        if (w.alpha <= 0.0 || w.sigma <= 0.0)
            throw ParseError(strfmt("wind source at bus %d requires alpha > 0 and sigma > 0", w.bus));
        (void)make_marginal(w.dist, w.dist_params); // validates distribution parameters
    }
    for (int db : dfig_buses)
        if (!wind_buses.count(db))
            throw ParseError(strfmt("wind plant at bus %d has no wind source", db));
    // Dynamics require a device behind every source bus: a bare slack or PV
    // bus would leave its scheduled injection with no machine to supply it.
    for (const Bus& b : buses) {
        if (b.kind == BusKind::PQ) continue;
        if (!gen_buses.count(b.id) && !dfig_buses.count(b.id))
            throw ParseError(strfmt("bus %d is a source bus but hosts no generator or wind plant",
                                    b.id));
    }
    for (const Disturbance& ev : events) {
        if (ev.kind == DisturbanceKind::LineTrip) (void)branch_index(ev.from, ev.to);
        else require_bus(ev.bus, "fault");
        if (ev.t < 0.0) throw ParseError("disturbance scheduled before t = 0");
    }
    // Every fault application must have a matching clear at a later time.
    std::vector<const Disturbance*> applies, clears;
    for (const Disturbance& ev : events) {
        if (ev.kind == DisturbanceKind::FaultApply) applies.push_back(&ev);
        if (ev.kind == DisturbanceKind::FaultClear) clears.push_back(&ev);
    }
    for (const Disturbance* a : applies) {
        const bool matched = std::any_of(clears.begin(), clears.end(), [&](const Disturbance* c) {
            return c->bus == a->bus && c->t > a->t;
        });
        if (!matched)
            throw ParseError(strfmt("fault at bus %d has no matching clear", a->bus));
    }
}

// ===========================================================================
// Case file parser
// ===========================================================================
//
// Sectioned plain text. Every `[section]` header opens a new record of that
// type; `key = value` lines fill the current record; `#` starts a comment.
// [events] lines use a small command grammar instead of key = value:
//   t=<s> trip <from>-<to>
//   t=<s> fault <bus> duration=<s> [x=<pu>]

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

struct CaseParser {
    std::string source_name;
    int line_no = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(strfmt("%s:%d: %s", source_name.c_str(), line_no, msg.c_str()));
    }

    [[nodiscard]] Real to_real(const std::string& v) const {
        try {
            size_t pos = 0;
            const Real r = std::stod(v, &pos);
            if (pos != v.size()) fail(strfmt("trailing characters in number '%s'", v.c_str()));
            return r;
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            fail(strfmt("expected a number, got '%s'", v.c_str()));
        }
    }

    [[nodiscard]] int to_int(const std::string& v) const {
        const Real r = to_real(v);
        const int i = static_cast<int>(std::lround(r));
        if (std::abs(r - static_cast<Real>(i)) > 1e-9) fail(strfmt("expected an integer, got '%s'", v.c_str()));
        return i;
    }

    [[nodiscard]] MachineOrder to_order(const std::string& v) const {
        if (v == "classical" || v == "ii") return MachineOrder::Classical;
        if (v == "iii") return MachineOrder::III;
        if (v == "iv") return MachineOrder::IV;
        if (v == "v") return MachineOrder::V;
        if (v == "vi") return MachineOrder::VI;
        fail(strfmt("unknown machine order '%s' (classical, iii, iv, v, vi)", v.c_str()));
    }

    [[nodiscard]] BusKind to_bus_kind(const std::string& v) const {
        if (v == "slack") return BusKind::Slack;
        if (v == "pv") return BusKind::PV;
        if (v == "pq") return BusKind::PQ;
        fail(strfmt("unknown bus kind '%s' (slack, pv, pq)", v.c_str()));
    }

    void parse_event_line(const std::string& line, PowerSystemCase& cs) const {
        std::istringstream iss(line);
        std::string tok;
        iss >> tok;
        if (tok.rfind("t=", 0) != 0) fail("event line must start with t=<seconds>");
        const Real t = to_real(tok.substr(2));
        std::string verb;
        iss >> verb;
        if (verb == "trip") {
            std::string pair;
            iss >> pair;
            const auto dash = pair.find('-');
            if (dash == std::string::npos) fail("trip requires <from>-<to>");
            Disturbance ev;
            ev.t = t;
            ev.kind = DisturbanceKind::LineTrip;
            ev.from = to_int(pair.substr(0, dash));
            ev.to = to_int(pair.substr(dash + 1));
            cs.events.push_back(ev);
        } else if (verb == "fault") {
            std::string bus_tok;
            iss >> bus_tok;
            Disturbance ev;
            ev.t = t;
            ev.kind = DisturbanceKind::FaultApply;
            ev.bus = to_int(bus_tok);
            std::optional<Real> duration;
            std::string opt;
            while (iss >> opt) {
                if (opt.rfind("duration=", 0) == 0) duration = to_real(opt.substr(9));
                else if (opt.rfind("x=", 0) == 0) ev.x_fault = to_real(opt.substr(2));
                else fail(strfmt("unknown fault option '%s'", opt.c_str()));
            }
            if (!duration) fail("fault requires duration=<seconds>");
            if (*duration <= 0.0) fail("fault duration must be positive");
            Disturbance clear = ev;
            clear.kind = DisturbanceKind::FaultClear;
            clear.t = t + *duration;
            cs.events.push_back(ev);
            cs.events.push_back(clear);
        } else {
            fail(strfmt("unknown event verb '%s' (trip, fault)", verb.c_str()));
        }
        std::string extra;
        if (iss >> extra) fail(strfmt("trailing token '%s' on event line", extra.c_str()));
    }
};

} // namespace detail

inline PowerSystemCase parse_case_stream(std::istream& in, const std::string& source_name) {
    using detail::trim;
    detail::CaseParser p;
    p.source_name = source_name;

    PowerSystemCase cs;
    std::string section;
    std::string line;

    while (std::getline(in, line)) {
        ++p.line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') p.fail("malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section == "bus") cs.buses.emplace_back();
            else if (section == "branch") cs.branches.emplace_back();
            else if (section == "gen") cs.gens.emplace_back();
            else if (section == "avr") cs.avrs.emplace_back();
            else if (section == "tg") cs.tgs.emplace_back();
            else if (section == "oxl") cs.oxls.emplace_back();
            else if (section == "erl") cs.erls.emplace_back();
            else if (section == "dfig") cs.dfigs.emplace_back();
            else if (section == "ltc") cs.ltcs.emplace_back();
            else if (section == "wind") cs.winds.emplace_back();
            else if (section == "case" || section == "sim" || section == "events") { /* singleton */ }
            else p.fail(strfmt("unknown section [%s]", section.c_str()));
            continue;
        }
        if (section.empty()) p.fail("content before the first section header");

        if (section == "events") {
            p.parse_event_line(line, cs);
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string::npos) p.fail("expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) p.fail("expected key = value");

        auto unknown = [&]() { p.fail(strfmt("unknown key '%s' in [%s]", key.c_str(), section.c_str())); };

        if (section == "case") {
            if (key == "name") cs.name = val;
            else unknown();
        } else if (section == "sim") {
            SimOptions& s = cs.sim;
            if (key == "horizon") s.horizon = p.to_real(val);
            else if (key == "base_mva") s.base_mva = p.to_real(val);
            else if (key == "freq") s.freq = p.to_real(val);
            else if (key == "shm_step") s.shm_step = p.to_real(val);
            else if (key == "shm_step_fault") s.shm_step_fault = p.to_real(val);
            else if (key == "refine_window") s.refine_window = p.to_real(val);
            else if (key == "dhm_tol") s.dhm_tol = p.to_real(val);
            else if (key == "dhm_min_step") s.dhm_min_step = p.to_real(val);
            else if (key == "dhm_max_step") s.dhm_max_step = p.to_real(val);
            else if (key == "output_dt") s.output_dt = p.to_real(val);
            else if (key == "monitor_dt") s.monitor_dt = p.to_real(val);
            else if (key == "newton_tol") s.newton_tol = p.to_real(val);
            else if (key == "newton_max_iter") s.newton_max_iter = p.to_int(val);
            else if (key == "rcond_min") s.rcond_min = p.to_real(val);
            else if (key == "v_band_lo") s.v_band_lo = p.to_real(val);
            else if (key == "v_band_hi") s.v_band_hi = p.to_real(val);
            else if (key == "v_collapse") s.v_collapse = p.to_real(val);
            else if (key == "collapse_hold") s.collapse_hold = p.to_real(val);
            else if (key == "settle_tol") s.settle_tol = p.to_real(val);
            else unknown();
        } else if (section == "bus") {
            Bus& b = cs.buses.back();
            if (key == "id") b.id = p.to_int(val);
            else if (key == "kind") b.kind = p.to_bus_kind(val);
            else if (key == "v") b.v_set = p.to_real(val);
            else if (key == "theta") b.theta_set = p.to_real(val);
            else if (key == "pload") b.p_load = p.to_real(val);
            else if (key == "qload") b.q_load = p.to_real(val);
            else if (key == "gshunt") b.g_shunt = p.to_real(val);
            else if (key == "bshunt") b.b_shunt = p.to_real(val);
            else unknown();
        } else if (section == "branch") {
            Branch& b = cs.branches.back();
            if (key == "from") b.from = p.to_int(val);
            else if (key == "to") b.to = p.to_int(val);
            else if (key == "r") b.r = p.to_real(val);
            else if (key == "x") b.x = p.to_real(val);
            else if (key == "b") b.b = p.to_real(val);
            else if (key == "tap") b.tap = p.to_real(val);
            else if (key == "status") b.online = p.to_int(val) != 0;
            else unknown();
        } else if (section == "gen") {
            GenParams& g = cs.gens.back();
            if (key == "bus") g.bus = p.to_int(val);
            else if (key == "order") g.order = p.to_order(val);
            else if (key == "pg") g.pg = p.to_real(val);
            else if (key == "H") g.H = p.to_real(val);
            else if (key == "D") g.D = p.to_real(val);
            else if (key == "ra") g.ra = p.to_real(val);
            else if (key == "xd") g.xd = p.to_real(val);
            else if (key == "xq") g.xq = p.to_real(val);
            else if (key == "xd1") g.xd1 = p.to_real(val);
            else if (key == "xq1") g.xq1 = p.to_real(val);
            else if (key == "xd2") g.xd2 = p.to_real(val);
            else if (key == "xq2") g.xq2 = p.to_real(val);
            else if (key == "Td01") g.Td01 = p.to_real(val);
            else if (key == "Tq01") g.Tq01 = p.to_real(val);
            else if (key == "Td02") g.Td02 = p.to_real(val);
            else if (key == "Tq02") g.Tq02 = p.to_real(val);
            else unknown();
        } else if (section == "avr") {
            AvrParams& a = cs.avrs.back();
            if (key == "gen") a.gen_bus = p.to_int(val);
            else if (key == "Ka") a.Ka = p.to_real(val);
            else if (key == "Ta") a.Ta = p.to_real(val);
            else if (key == "ef_min") a.ef_min = p.to_real(val);
            else if (key == "ef_max") a.ef_max = p.to_real(val);
            else unknown();
        } else if (section == "tg") {
            TgParams& t = cs.tgs.back();
            if (key == "gen") t.gen_bus = p.to_int(val);
            else if (key == "wref") t.wref = p.to_real(val);
            else if (key == "R") t.droop = p.to_real(val);
            else if (key == "pmax") t.pmax = p.to_real(val);
            else if (key == "pmin") t.pmin = p.to_real(val);
            else if (key == "Ts") t.Ts = p.to_real(val);
            else if (key == "Tc") t.Tc = p.to_real(val);
            else if (key == "T3") t.T3 = p.to_real(val);
            else if (key == "T4") t.T4 = p.to_real(val);
            else if (key == "T5") t.T5 = p.to_real(val);
            else unknown();
        } else if (section == "oxl") {
            OxlParams& o = cs.oxls.back();
            if (key == "gen") o.gen_bus = p.to_int(val);
            else if (key == "iflim") o.if_lim = p.to_real(val);
            else if (key == "T0") o.T0 = p.to_real(val);
            else if (key == "vmax") o.v_max = p.to_real(val);
            else if (key == "delay") o.delay = p.to_real(val);
            else unknown();
        } else if (section == "erl") {
            ErlParams& e = cs.erls.back();
            if (key == "bus") e.bus = p.to_int(val);
            else if (key == "kp") e.kp = p.to_real(val);
            else if (key == "kq") e.kq = p.to_real(val);
            else if (key == "Tp") e.Tp = p.to_real(val);
            else if (key == "Tq") e.Tq = p.to_real(val);
            else if (key == "alpha_s") e.alpha_s = p.to_real(val);
            else if (key == "alpha_t") e.alpha_t = p.to_real(val);
            else if (key == "beta_s") e.beta_s = p.to_real(val);
            else if (key == "beta_t") e.beta_t = p.to_real(val);
            else unknown();
        } else if (section == "dfig") {
            DfigParams& d = cs.dfigs.back();
            if (key == "bus") d.bus = p.to_int(val);
            else if (key == "pg") d.pg = p.to_real(val);
            else if (key == "rs") d.rs = p.to_real(val);
            else if (key == "xs") d.xs = p.to_real(val);
            else if (key == "rr") d.rr = p.to_real(val);
            else if (key == "xr") d.xr = p.to_real(val);
            else if (key == "xmu") d.xmu = p.to_real(val);
            else if (key == "Hm") d.Hm = p.to_real(val);
            else if (key == "Kp") d.Kp = p.to_real(val);
            else if (key == "Tp") d.Tp = p.to_real(val);
            else if (key == "Kv") d.Kv = p.to_real(val);
            else if (key == "Teps") d.Teps = p.to_real(val);
            else if (key == "R") d.R = p.to_real(val);
            else if (key == "np") d.np = p.to_real(val);
            else if (key == "nb") d.nb = p.to_real(val);
            else if (key == "etaGB") d.etaGB = p.to_real(val);
            else if (key == "ng") d.ng = p.to_real(val);
            else if (key == "sn") d.sn = p.to_real(val);
            else if (key == "pmax") d.pmax = p.to_real(val);
            else if (key == "pmin") d.pmin = p.to_real(val);
            else if (key == "qmax") d.qmax = p.to_real(val);
            else if (key == "qmin") d.qmin = p.to_real(val);
            else unknown();
        } else if (section == "ltc") {
            LtcParams& l = cs.ltcs.back();
            if (key == "from") l.from = p.to_int(val);
            else if (key == "to") l.to = p.to_int(val);
            else if (key == "bus") l.ctrl_bus = p.to_int(val);
            else if (key == "v0") l.v0 = p.to_real(val);
            else if (key == "d") l.d = p.to_real(val);
            else if (key == "step") l.step = p.to_real(val);
            else if (key == "nmax") l.nmax = p.to_real(val);
            else if (key == "nmin") l.nmin = p.to_real(val);
            else if (key == "T0") l.T0 = p.to_real(val);
            else if (key == "Tk") l.Tk = p.to_real(val);
            else unknown();
        } else if (section == "wind") {
            WindParams& w = cs.winds.back();
            if (key == "bus") w.bus = p.to_int(val);
            else if (key == "alpha") w.alpha = p.to_real(val);
            else if (key == "sigma") w.sigma = p.to_real(val);
            else if (key == "dist") w.dist = val;
            else if (key == "eta0") { w.eta0_pinned = true; w.eta0 = p.to_real(val); }
            else w.dist_params[key] = p.to_real(val); // validated by the marginal factory
        } else {
            p.fail(strfmt("unknown section [%s]", section.c_str()));
        }
    }

    std::stable_sort(cs.events.begin(), cs.events.end(),
                     [](const Disturbance& a, const Disturbance& b) { return a.t < b.t; });
    cs.validate();
    return cs;
}

inline PowerSystemCase parse_case_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(strfmt("cannot open case file '%s'", path.c_str()));
    return parse_case_stream(in, path);
}

inline PowerSystemCase parse_case_string(const std::string& text, const std::string& name = "<string>") {
    std::istringstream in(text);
    return parse_case_stream(in, name);
}

/// Build the wind sources declared by a case, in case order. Stream ids are
/// assigned by source index.
[[nodiscard]] inline std::vector<WindSource> build_wind_sources(const PowerSystemCase& cs) {
    std::vector<WindSource> out;
    for (const WindParams& w : cs.winds) {
        WindSource s;
        s.bus = w.bus;
        s.alpha = w.alpha;
        s.sigma = w.sigma;
        s.marginal = make_marginal(w.dist, w.dist_params);
        s.eta0_pinned = w.eta0_pinned;
        s.eta0 = w.eta0;
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace windgrid
