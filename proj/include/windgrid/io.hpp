#pragma once

/// Artifact writers: trajectory, event, overlay, and ensemble CSV files plus
/// plain-text analysis reports. All floating-point fields are written with
/// %.17g so a round-trip through text reproduces the binary values exactly,
/// and nothing here embeds wall-clock state: rerunning the same seed yields
/// byte-identical files.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "engine.hpp"
#include "system_model.hpp"

namespace windgrid {

/// Creates the directory (and parents) if needed; returns the path itself.
inline std::string ensure_dir(const std::string& dir) {
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw NumericsError(strfmt("cannot open '%s' for writing", path.c_str()));
    return os;
}

/// One trajectory column: a label, a class tag for downstream tooling, and an
/// extractor over (state vector, discrete state).
struct Column {
    std::string name;
    std::string cls;  ///< fast | slow | eta | voltage | wind | derived
    std::function<Real(const Eigen::VectorXd&, const DiscreteState&)> value;
};

/// The full column set for a model: every continuous state by name, bus
/// voltage magnitude and angle, transformed wind speeds, and the derived
/// per-device quantities used by the comparison plots (plant active power,
/// machine field current).
inline std::vector<Column> trajectory_columns(const SystemModel& m) {
    std::vector<Column> cols;
    const auto& map = m.map();
    const auto in = [](const std::vector<int>& v, int i) {
        return std::find(v.begin(), v.end(), i) != v.end();
    };
    for (int i = 0; i < map.n_state(); ++i) {
        const std::string cls = in(map.eta_states, i)  ? "eta"
                                : in(map.fast_states, i) ? "fast"
                                                         : "slow";
        cols.push_back({map.name_of(i), cls,
                        [i](const Eigen::VectorXd& u, const DiscreteState&) { return u[i]; }});
    }
    const auto& buses = m.system_case().buses;
    for (int b = 0; b < map.nbus; ++b) {
        const int re = map.n_state() + b;
        const int im = map.n_state() + map.nbus + b;
        cols.push_back({strfmt("v_%d", buses[static_cast<std::size_t>(b)].id), "voltage",
                        [re, im](const Eigen::VectorXd& u, const DiscreteState&) {
                            return std::hypot(u[re], u[im]);
                        }});
        cols.push_back({strfmt("theta_%d", buses[static_cast<std::size_t>(b)].id), "voltage",
                        [re, im](const Eigen::VectorXd& u, const DiscreteState&) {
                            return std::atan2(u[im], u[re]);
                        }});
    }
    for (std::size_t s = 0; s < m.wind_sources().size(); ++s) {
        const int row = m.map().n_state() + 2 * map.nbus + static_cast<int>(s);
        cols.push_back({strfmt("yw_%d", m.wind_sources()[s].bus), "wind",
                        [row](const Eigen::VectorXd& u, const DiscreteState&) { return u[row]; }});
    }
    for (std::size_t k = 0; k < m.plants().size(); ++k)
        cols.push_back({strfmt("p_wind_%d", buses[static_cast<std::size_t>(m.plants()[k].bus())].id),
                        "derived", [&m, k](const Eigen::VectorXd& u, const DiscreteState& d) {
                            return m.plant_power(static_cast<int>(k), u, d);
                        }});
    for (std::size_t k = 0; k < m.machines().size(); ++k)
        cols.push_back(
            {strfmt("i_f_%d", buses[static_cast<std::size_t>(m.machines()[k].bus())].id),
             "derived", [&m, k](const Eigen::VectorXd& u, const DiscreteState& d) {
                 return m.field_current(static_cast<int>(k), u, d);
             }});
    return cols;
}

inline void write_trajectory_csv(const std::string& path, const SystemModel& m,
                                 const Trajectory& tr) {
    const auto cols = trajectory_columns(m);
    auto os = open_out(path);
    os << "t";
    for (const auto& c : cols) os << "," << c.name;
    os << "\n";
    for (const auto& pt : tr.points) {
        const DiscreteState d = tr.discrete_at(pt.t);
        os << strfmt("%.17g", pt.t);
        for (const auto& c : cols) os << strfmt(",%.17g", c.value(pt.u, d));
        os << "\n";
    }
}

/// Column manifest sidecar: name and class per column, one line each, so
/// plotting scripts can pick fast/slow/voltage groups without parsing names.
inline void write_manifest(const std::string& path, const SystemModel& m) {
    auto os = open_out(path);
    os << "column,class\n";
    os << "t,time\n";
    for (const auto& c : trajectory_columns(m)) os << c.name << "," << c.cls << "\n";
}

inline void write_events_csv(const std::string& path, const Trajectory& tr) {
    auto os = open_out(path);
    os << "t,kind,target,value\n";
    for (const auto& e : tr.events)
        os << strfmt("%.17g,%s,%s,%.17g\n", e.t, e.kind.c_str(), e.target.c_str(), e.value);
}

/// Overlay of two runs on their shared time grid; every column appears once
/// per run, prefixed with the run label. Points that only one run recorded
/// (e.g. after an early stop) are dropped.
inline void write_overlay_csv(const std::string& path, const SystemModel& m, const Trajectory& a,
                              const std::string& label_a, const Trajectory& b,
                              const std::string& label_b) {
    const auto cols = trajectory_columns(m);
    auto os = open_out(path);
    os << "t";
    for (const auto& c : cols) os << "," << label_a << "_" << c.name;
    for (const auto& c : cols) os << "," << label_b << "_" << c.name;
    os << "\n";
    std::size_t j = 0;
    for (const auto& pa : a.points) {
        while (j < b.points.size() && b.points[j].t < pa.t - 1e-9) ++j;
        if (j >= b.points.size()) break;
        if (std::abs(b.points[j].t - pa.t) > 1e-9) continue;
        const auto& pb = b.points[j];
        const DiscreteState da = a.discrete_at(pa.t);
        const DiscreteState db = b.discrete_at(pb.t);
        os << strfmt("%.17g", pa.t);
        for (const auto& c : cols) os << strfmt(",%.17g", c.value(pa.u, da));
        for (const auto& c : cols) os << strfmt(",%.17g", c.value(pb.u, db));
        os << "\n";
    }
}

struct PathSummary {
    unsigned long long seed = 0;
    Verdict verdict = Verdict::Stable;
    RunStatus status = RunStatus::Completed;
    Real end_time = 0.0;
    Real min_voltage = 0.0;
    int n_events = 0;
    double wall_ms = 0.0;
};

inline void write_paths_csv(const std::string& path, const std::vector<PathSummary>& rows) {
    auto os = open_out(path);
    os << "seed,verdict,status,end_time,min_voltage,n_events,wall_ms\n";
    for (const auto& r : rows)
        os << strfmt("%llu,%s,%s,%.17g,%.17g,%d,%.3f\n", r.seed, to_string(r.verdict),
                     to_string(r.status), r.end_time, r.min_voltage, r.n_events, r.wall_ms);
}

inline void write_deviation_report(const std::string& path, const DeviationReport& rep,
                                   const std::string& label_a, const std::string& label_b) {
    auto os = open_out(path);
    os << "trajectory deviation: " << label_a << " vs " << label_b << "\n";
    os << "comparable: " << (rep.comparable ? "yes" : "no") << "\n";
    if (!rep.comparable) {
        os << "reason: " << rep.reason << "\n";
        return;
    }
    os << strfmt("instants compared: %d\n", rep.n_compared);
    os << strfmt("sup fast-state deviation: %.6e\n", rep.fast_sup);
    os << strfmt("sup slow-state deviation: %.6e\n", rep.slow_sup);
    os << strfmt("sup wind-state deviation: %.6e\n", rep.eta_sup);
}

namespace detail {

/// First failing check per condition, if any, for the report headline.
inline std::string condition_failure_line(const ConditionReport& rep) {
    if (!rep.cond_manifold)
        for (const auto& mc : rep.manifold_checks)
            if (!mc.found || !mc.stable)
                return strfmt("condition (i) fails at t=%.6g: %s", mc.t,
                              !mc.found ? "no fast equilibrium" : "fast equilibrium repelling");
    if (!rep.cond_entry)
        for (const auto& ec : rep.entry_checks)
            if (!ec.inside)
                return strfmt("condition (ii) fails at t=%.6g: %s", ec.t,
                              ec.note.empty()
                                  ? strfmt("deviation measure %.3e exceeds %.3e", ec.qf, ec.limit)
                                        .c_str()
                                  : ec.note.c_str());
    if (!rep.cond_attraction)
        for (const auto& ac : rep.attraction_checks)
            if (ac.verdict != AttractionVerdict::Satisfied)
                return strfmt("condition (iii) fails at event t=%.6g: %s", ac.t_event,
                              ac.note.empty() ? "post-event state not attracted" : ac.note.c_str());
    return {};
}

}  // namespace detail

/// Plain-text condition report. The three numbered conditions are the
/// transfer requirements checked by the analysis layer: (i) an attracting
/// fast equilibrium along the whole deterministic trajectory, (ii) re-entry
/// into the half-radius neighborhood before each event, (iii) consistent
/// attraction across each event.
inline void write_condition_report(const std::string& path, const ConditionReport& rep) {
    auto os = open_out(path);
    os << "long-term stability condition report\n";
    os << strfmt("deterministic run: status=%s verdict=%s settle=%.3e\n", to_string(rep.dhm_status),
                 to_string(rep.dhm_verdict), rep.dhm_settle);
    os << strfmt("neighborhood radius h: %.6g\n", rep.h);
    os << strfmt("condition (i) attracting fast equilibrium along the trajectory: %s (%zu checks)\n",
                 rep.cond_manifold ? "satisfied" : "violated", rep.manifold_checks.size());
    for (const auto& mc : rep.manifold_checks)
        if (!mc.found || !mc.stable)
            os << strfmt("  t=%.6g %s%s\n", mc.t,
                         !mc.found ? "no fast equilibrium" : "fast equilibrium repelling",
                         mc.note.empty() ? "" : (": " + mc.note).c_str());
    os << strfmt("condition (ii) re-entry into the half neighborhood before events: %s (%zu checks)\n",
                 rep.cond_entry ? "satisfied" : "violated", rep.entry_checks.size());
    for (const auto& ec : rep.entry_checks)
        os << strfmt("  t=%.6g deviation=%.3e limit=%.3e %s%s\n", ec.t, ec.qf, ec.limit,
                     ec.inside ? "inside" : "OUTSIDE",
                     ec.note.empty() ? "" : (": " + ec.note).c_str());
    os << strfmt("condition (iii) consistent attraction across events: %s (%zu events)\n",
                 rep.cond_attraction ? "satisfied" : "violated", rep.attraction_checks.size());
    for (const auto& ac : rep.attraction_checks)
        os << strfmt("  event t=%.6g %s dist=%.3e%s\n", ac.t_event,
                     ac.verdict == AttractionVerdict::Satisfied    ? "satisfied"
                     : ac.verdict == AttractionVerdict::Violated   ? "VIOLATED"
                                                                   : "indeterminate",
                     ac.dist, ac.note.empty() ? "" : (": " + ac.note).c_str());
    const std::string fail = detail::condition_failure_line(rep);
    if (!fail.empty()) os << fail << "\n";
    os << "DHM-trustworthy: " << (rep.trustworthy ? "yes" : "no") << "\n";
}

/// Per-check CSV companion to the text report.
inline void write_condition_csv(const std::string& path, const ConditionReport& rep) {
    auto os = open_out(path);
    os << "kind,t,ok,detail\n";
    for (const auto& mc : rep.manifold_checks)
        os << strfmt("manifold,%.17g,%d,residual=%.3e\n", mc.t, (mc.found && mc.stable) ? 1 : 0,
                     mc.residual);
    for (const auto& ec : rep.entry_checks)
        os << strfmt("entry,%.17g,%d,deviation=%.17g limit=%.17g\n", ec.t, ec.inside ? 1 : 0, ec.qf,
                     ec.limit);
    for (const auto& ac : rep.attraction_checks)
        os << strfmt("attraction,%.17g,%d,dist=%.17g\n", ac.t_event,
                     ac.verdict == AttractionVerdict::Satisfied ? 1 : 0, ac.dist);
}

inline void write_exit_csv(const std::string& path, const ExitStudy& st,
                           unsigned long long seed0) {
    auto os = open_out(path);
    os << "seed,exited,first_exit,max_qf\n";
    for (int i = 0; i < st.n_paths; ++i) {
        const Real fe = st.first_exit[static_cast<std::size_t>(i)];
        os << strfmt("%llu,%d,%.17g,%.17g\n", seed0 + static_cast<unsigned long long>(i),
                     std::isnan(fe) ? 0 : 1, fe, st.max_qf[static_cast<std::size_t>(i)]);
    }
}

}  // namespace windgrid
