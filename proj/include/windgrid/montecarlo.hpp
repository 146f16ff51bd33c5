#pragma once

/// Seed-fanned ensemble driver for the stochastic model. Path i always runs
/// with seed = base + i and lands in slot i, so the summary is identical for
/// any worker count; only wall-clock figures vary between reruns.

#include <atomic>
#include <chrono>
#include <thread>
#include <vector>

#include "engine.hpp"
#include "io.hpp"

namespace windgrid {

struct EnsembleResult {
    std::vector<PathSummary> paths;
    int n_stable = 0;
    int n_unsettled = 0;
    int n_collapse = 0;
    int n_failed = 0;  ///< singular or diverged paths
    Real collapse_fraction = 0.0;
    double wall_ms = 0.0;  ///< whole-ensemble wall time
};

inline EnsembleResult run_ensemble(const Simulator& sim, const RunConfig& base, int n_paths,
                                   unsigned long long seed0, int jobs) {
    const auto t_start = std::chrono::steady_clock::now();
    EnsembleResult res;
    res.paths.resize(static_cast<std::size_t>(n_paths));
    std::atomic<int> next{0};

    const auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n_paths) return;
            RunConfig cfg = base;
            cfg.record = false;
            cfg.on_output = nullptr;
            cfg.seed = seed0 + static_cast<unsigned long long>(i);
            PathSummary& ps = res.paths[static_cast<std::size_t>(i)];
            ps.seed = cfg.seed;
            try {
                const Trajectory tr = sim.run(cfg);
                ps.verdict = tr.verdict;
                ps.status = tr.status;
                ps.end_time = tr.end_time;
                ps.min_voltage = tr.min_voltage;
                ps.n_events = static_cast<int>(tr.events.size());
                ps.wall_ms = tr.wall_ms;
            } catch (const std::exception&) {
                ps.verdict = Verdict::Singular;
                ps.status = RunStatus::Singular;
                ps.end_time = 0.0;
                ps.min_voltage = 0.0;
            }
        }
    };

    const int nw = std::max(1, std::min(jobs, n_paths));
    if (nw == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(nw));
        for (int k = 0; k < nw; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    for (const auto& ps : res.paths) {
        switch (ps.verdict) {
            case Verdict::Stable: ++res.n_stable; break;
            case Verdict::Unsettled: ++res.n_unsettled; break;
            case Verdict::Collapse: ++res.n_collapse; break;
            default: ++res.n_failed; break;
        }
    }
    res.collapse_fraction = n_paths > 0 ? static_cast<Real>(res.n_collapse) / n_paths : 0.0;
    res.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();
    return res;
}

}  // namespace windgrid
