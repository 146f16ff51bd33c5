/// Command-line front end: power-flow solves, single simulations, seed
/// ensembles, deterministic-verdict condition checks, and SHM/DHM overlay
/// comparisons. Exit codes: 0 success or long-term stable, 1 usage or case
/// parse error, 2 not long-term stable (or verdict not trustworthy),
/// 3 numerical failure (singular matrix, divergence).

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "windgrid/analysis.hpp"
#include "windgrid/case.hpp"
#include "windgrid/engine.hpp"
#include "windgrid/io.hpp"
#include "windgrid/montecarlo.hpp"
#include "windgrid/power_flow.hpp"
#include "windgrid/system_model.hpp"

namespace {

using namespace windgrid;

struct Options {
    std::string case_path;
    std::string model = "dhm";
    unsigned long long seed = 1;
    int paths = 50;
    int jobs = 1;
    double horizon = -1.0;  // < 0: use the case horizon
    double sigma = 1.0;     // scale on every wind source's noise intensity
    double h_ratio = 10.0;  // neighborhood radius as a multiple of sigma
    std::string output = "windgrid_out";
};

RunModel parse_model(const std::string& s) {
    if (s == "shm") return RunModel::Shm;
    if (s == "dhm") return RunModel::Dhm;
    if (s == "qss") return RunModel::Qss;
    throw CLI::ValidationError("--model", "expected one of shm|dhm|qss");
}

int exit_code_for(Verdict v) {
    switch (v) {
        case Verdict::Stable: return 0;
        case Verdict::Unsettled:
        case Verdict::Collapse: return 2;
        default: return 3;
    }
}

/// Parse + semantic validation; usage-level failure (exit 1) on any error.
PowerSystemCase load_case(const std::string& path) { return parse_case_file(path); }

/// The simulator keeps a pointer to the model, so the model's address must
/// outlive it; both live behind stable heap slots.
struct LoadedModel {
    std::unique_ptr<SystemModel> model;
    std::unique_ptr<Simulator> sim;
};

LoadedModel build_model(const PowerSystemCase& cs) {
    auto m = std::make_unique<SystemModel>(cs);
    const auto init = m->initialize();
    auto sim = std::make_unique<Simulator>(*m, init.u0, init.d0);
    return {std::move(m), std::move(sim)};
}

RunConfig base_config(const Options& o) {
    RunConfig cfg;
    cfg.model = parse_model(o.model);
    cfg.seed = o.seed;
    cfg.sigma_scale = o.sigma;
    cfg.horizon = o.horizon;
    return cfg;
}

int cmd_powerflow(const Options& o) {
    const PowerSystemCase cs = load_case(o.case_path);
    const PowerFlowResult pf = solve_power_flow(cs);
    if (!pf.converged) {
        std::fprintf(stderr, "error: power flow did not converge (mismatch %.3e)\n",
                     pf.max_mismatch);
        return 3;
    }
    std::printf("power flow converged in %d iterations, max mismatch %.3e\n", pf.iterations,
                pf.max_mismatch);
    std::printf("%6s %10s %10s %10s %10s\n", "bus", "v[pu]", "theta[deg]", "pgen[pu]", "qgen[pu]");
    for (std::size_t b = 0; b < cs.buses.size(); ++b)
        std::printf("%6d %10.5f %10.4f %10.4f %10.4f\n", cs.buses[b].id, pf.vmag[b],
                    pf.theta[b] * 180.0 / kPi, pf.p_gen[b], pf.q_gen[b]);
    const std::string dir = ensure_dir(o.output);
    const std::string path = dir + "/powerflow.csv";
    auto os = open_out(path);
    os << "bus,v,theta,p_gen,q_gen\n";
    for (std::size_t b = 0; b < cs.buses.size(); ++b)
        os << strfmt("%d,%.17g,%.17g,%.17g,%.17g\n", cs.buses[b].id, pf.vmag[b], pf.theta[b],
                     pf.p_gen[b], pf.q_gen[b]);
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_simulate(const Options& o) {
    const PowerSystemCase cs = load_case(o.case_path);
    LoadedModel lm = build_model(cs);
    const Trajectory tr = lm.sim->run(base_config(o));

    const std::string dir = ensure_dir(o.output);
    const std::string traj_path = dir + "/trajectory.csv";
    const std::string events_path = dir + "/events.csv";
    const std::string manifest_path = dir + "/columns.csv";
    write_trajectory_csv(traj_path, *lm.model, tr);
    write_events_csv(events_path, tr);
    write_manifest(manifest_path, *lm.model);

    std::printf("model=%s seed=%llu sigma-scale=%g horizon=%.6g\n", to_string(tr.model),
                static_cast<unsigned long long>(tr.seed), tr.sigma_scale, tr.end_time);
    std::printf("status=%s settle=%.3e min-voltage=%.4f events=%zu\n", to_string(tr.status),
                tr.settle, tr.min_voltage, tr.events.size());
    if (!tr.note.empty()) std::printf("note: %s\n", tr.note.c_str());
    std::printf("STABILITY: %s\n", to_string(tr.verdict));
    std::printf("wrote %s\n", traj_path.c_str());
    std::printf("wrote %s\n", events_path.c_str());
    std::printf("wrote %s\n", manifest_path.c_str());
    std::fprintf(stderr, "wall time %.1f ms, %lld steps, %lld solver iterations\n", tr.wall_ms,
                 static_cast<long long>(tr.steps), static_cast<long long>(tr.newton_iters));
    return exit_code_for(tr.verdict);
}

int cmd_montecarlo(const Options& o) {
    const PowerSystemCase cs = load_case(o.case_path);
    LoadedModel lm = build_model(cs);
    const EnsembleResult res = run_ensemble(*lm.sim, base_config(o), o.paths, o.seed, o.jobs);

    const std::string dir = ensure_dir(o.output);
    const std::string path = dir + "/paths.csv";
    write_paths_csv(path, res.paths);

    std::printf("paths=%d stable=%d unsettled=%d collapse=%d failed=%d\n",
                static_cast<int>(res.paths.size()), res.n_stable, res.n_unsettled, res.n_collapse,
                res.n_failed);
    std::printf("collapse fraction: %.4f\n", res.collapse_fraction);
    std::printf("wrote %s\n", path.c_str());
    std::fprintf(stderr, "ensemble wall time %.1f ms (%d workers)\n", res.wall_ms,
                 std::max(1, std::min(o.jobs, o.paths)));
    if (res.n_collapse > 0 || res.n_unsettled > 0) return 2;
    if (res.n_failed > 0) return 3;
    return 0;
}

int cmd_check(const Options& o) {
    const PowerSystemCase cs = load_case(o.case_path);
    LoadedModel lm = build_model(cs);
    ConditionOptions opt;
    opt.h_ratio = o.h_ratio;
    if (o.horizon > 0.0) opt.horizon = o.horizon;
    const ConditionReport rep = check_conditions(*lm.model, *lm.sim, opt);

    const std::string dir = ensure_dir(o.output);
    const std::string report_path = dir + "/condition_report.txt";
    const std::string csv_path = dir + "/condition_checks.csv";
    write_condition_report(report_path, rep);
    write_condition_csv(csv_path, rep);

    std::printf("deterministic verdict: %s (status %s)\n", to_string(rep.dhm_verdict),
                to_string(rep.dhm_status));
    std::printf("condition (i) attracting fast equilibrium: %s\n",
                rep.cond_manifold ? "satisfied" : "violated");
    std::printf("condition (ii) half-neighborhood re-entry: %s\n",
                rep.cond_entry ? "satisfied" : "violated");
    std::printf("condition (iii) consistent attraction: %s\n",
                rep.cond_attraction ? "satisfied" : "violated");
    const std::string fail = detail::condition_failure_line(rep);
    if (!fail.empty()) std::printf("%s\n", fail.c_str());
    std::printf("DHM-trustworthy: %s\n", rep.trustworthy ? "yes" : "no");
    std::printf("wrote %s\n", report_path.c_str());
    std::printf("wrote %s\n", csv_path.c_str());
    return rep.trustworthy ? 0 : 2;
}

int cmd_compare(const Options& o) {
    const PowerSystemCase cs = load_case(o.case_path);
    LoadedModel lm = build_model(cs);

    RunConfig cfg_s = base_config(o);
    cfg_s.model = RunModel::Shm;
    const Trajectory tr_s = lm.sim->run(cfg_s);
    RunConfig cfg_d = base_config(o);
    cfg_d.model = RunModel::Dhm;
    const Trajectory tr_d = lm.sim->run(cfg_d);

    const Real window = 2.0;
    const DeviationReport rep = measure_deviation(*lm.model, tr_s, tr_d, window);

    const std::string dir = ensure_dir(o.output);
    const std::string overlay_path = dir + "/overlay.csv";
    const std::string report_path = dir + "/deviation.txt";
    write_overlay_csv(overlay_path, *lm.model, tr_s, "shm", tr_d, "dhm");
    write_deviation_report(report_path, rep, "shm", "dhm");

    std::printf("shm: status=%s verdict=%s  dhm: status=%s verdict=%s\n", to_string(tr_s.status),
                to_string(tr_s.verdict), to_string(tr_d.status), to_string(tr_d.verdict));
    if (rep.comparable) {
        std::printf("sup deviations over %d shared instants (%.3gs settling excluded):\n",
                    rep.n_compared, window);
        std::printf("  fast states: %.6e\n", rep.fast_sup);
        std::printf("  slow states: %.6e\n", rep.slow_sup);
        std::printf("  wind states: %.6e\n", rep.eta_sup);
    } else {
        std::printf("trajectories not comparable: %s\n", rep.reason.c_str());
    }
    std::printf("wrote %s\n", overlay_path.c_str());
    std::printf("wrote %s\n", report_path.c_str());
    std::fprintf(stderr, "wall time: shm %.1f ms, dhm %.1f ms\n", tr_s.wall_ms, tr_d.wall_ms);
    return rep.comparable ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Long-term power-system stability toolkit: stochastic and deterministic "
                 "hybrid simulation with verdict-transfer condition checks"};
    app.require_subcommand(1);

    Options o;
    const auto add_common = [&o](CLI::App* sub, bool needs_case) {
        auto* c = sub->add_option("--case", o.case_path, "case description file");
        if (needs_case) c->required()->check(CLI::ExistingFile);
        sub->add_option("--output", o.output, "artifact directory (created if missing)");
    };

    auto* pf = app.add_subcommand("powerflow", "solve the static network for a case");
    add_common(pf, true);

    auto* sim = app.add_subcommand("simulate", "run one trajectory and classify stability");
    add_common(sim, true);
    sim->add_option("--model", o.model, "integration model: shm|dhm|qss")
        ->check(CLI::IsMember({"shm", "dhm", "qss"}));
    sim->add_option("--seed", o.seed, "noise seed (stochastic model only)");
    sim->add_option("--horizon", o.horizon, "simulation horizon [s], overrides the case");
    sim->add_option("--sigma", o.sigma, "scale factor on wind noise intensity");

    auto* mc = app.add_subcommand("montecarlo", "run a seed ensemble of stochastic trajectories");
    add_common(mc, true);
    mc->add_option("--model", o.model, "integration model: shm|dhm|qss");
    mc->add_option("--seed", o.seed, "base seed; path i uses seed+i");
    mc->add_option("--paths", o.paths, "number of paths")->check(CLI::PositiveNumber);
    mc->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    mc->add_option("--horizon", o.horizon, "simulation horizon [s], overrides the case");
    mc->add_option("--sigma", o.sigma, "scale factor on wind noise intensity");

    auto* chk = app.add_subcommand(
        "check", "verify the conditions for trusting the deterministic verdict");
    add_common(chk, true);
    chk->add_option("--horizon", o.horizon, "simulation horizon [s], overrides the case");
    chk->add_option("--h-ratio", o.h_ratio, "neighborhood radius as a multiple of sigma")
        ->check(CLI::PositiveNumber);

    auto* cmp = app.add_subcommand("compare",
                                   "overlay one stochastic path against the deterministic run");
    add_common(cmp, true);
    cmp->add_option("--seed", o.seed, "noise seed for the stochastic run");
    cmp->add_option("--horizon", o.horizon, "simulation horizon [s], overrides the case");
    cmp->add_option("--sigma", o.sigma, "scale factor on wind noise intensity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(pf)) return cmd_powerflow(o);
        if (app.got_subcommand(sim)) return cmd_simulate(o);
        if (app.got_subcommand(mc)) {
            if (mc->count("--model") == 0) o.model = "shm";
            return cmd_montecarlo(o);
        }
        if (app.got_subcommand(chk)) return cmd_check(o);
        if (app.got_subcommand(cmp)) return cmd_compare(o);
        return 1;
    } catch (const windgrid::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const windgrid::NumericsError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
