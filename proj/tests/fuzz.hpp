#pragma once

// Fuzz drivers shared by the unit tests and the acceptance binary. Each
// returns an empty string on agreement with the oracle, else a diagnosis.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <random>
#include <string>

#include "oohsim/pml_device.hpp"
#include "oohsim/simulation.hpp"
#include "oracle.hpp"

namespace fuzz {

inline std::string pml_trace(std::uint64_t seed, int ops = 600)
{
    std::mt19937_64 rng(seed);
    oohsim::PmlBuffer buf;
    oracle::PmlModel model;
    std::uniform_int_distribution<int> pick(0, 99);
    for (int i = 0; i < ops; ++i) {
        const int p = pick(rng);
        if (p < 2) {
            buf.reset(512);
            model.reset(512);
        } else if (p < 4) {
            buf.reset(511);
            model.reset(511);
        } else {
            const std::uint64_t v = rng();
            const auto got = buf.log(v);
            const auto want = model.log(v);
            const bool same = (want == oracle::PmlModel::Logged && got == oohsim::BufferOutcome::Logged) ||
                              (want == oracle::PmlModel::Full && got == oohsim::BufferOutcome::Full) ||
                              (want == oracle::PmlModel::Disabled &&
                               got == oohsim::BufferOutcome::Disabled);
            if (!same) {
                return "seed " + std::to_string(seed) + " op " + std::to_string(i) +
                       ": outcome differs";
            }
        }
        if (buf.index() != model.index) {
            return "seed " + std::to_string(seed) + " op " + std::to_string(i) + ": index " +
                   std::to_string(buf.index()) + " expected " + std::to_string(model.index);
        }
        if (model.index <= 511 && buf.count() != static_cast<std::size_t>(511 - model.index)) {
            return "seed " + std::to_string(seed) + ": count disagrees with index";
        }
        if (buf.entries() != model.entries) {
            return "seed " + std::to_string(seed) + " op " + std::to_string(i) +
                   ": entries differ";
        }
    }
    return {};
}

inline std::string describe(const std::set<oohsim::Gva>& s)
{
    std::string out;
    for (const auto g : s) {
        if (out.size() > 60) {
            return out + "...";
        }
        out += std::to_string(g.value) + " ";
    }
    return out;
}

/// Runs one fuzzed trace under `t`. Exact techniques must report the replay
/// dirty set; SPML must report a subset missing exactly the pages whose GPA
/// changed after their last write.
inline std::string dirty_trace(const oohsim::CostTable& costs, oohsim::Technique t,
                               std::uint64_t seed, std::uint64_t max_pages = 4096)
{
    using namespace oohsim;
    const Workload w = make_fuzz_trace(FuzzSpec{max_pages, true, seed}, costs.page_size());
    const oracle::Replay truth(w);
    SimulationConfig cfg;
    cfg.tracker = TrackerConfig::of(t);
    Simulation sim(costs, cfg, w);
    const RunResult r = sim.run();
    const std::string id = std::string(to_string(t)) + " seed " + std::to_string(seed);
    if (!r.completed || !r.report) {
        return id + ": run did not complete";
    }
    const auto& got = r.report->dirty_set;
    const auto want = truth.dirty();
    if (t != Technique::Spml) {
        if (got != want) {
            std::set<Gva> diff;
            std::set_symmetric_difference(got.begin(), got.end(), want.begin(), want.end(),
                                          std::inserter(diff, diff.end()));
            return id + ": dirty set differs at " + describe(diff);
        }
        return {};
    }
    if (!std::includes(want.begin(), want.end(), got.begin(), got.end())) {
        return id + ": reported pages that were not dirtied";
    }
    std::set<Gva> missed;
    std::set_difference(want.begin(), want.end(), got.begin(), got.end(),
                        std::inserter(missed, missed.end()));
    if (missed != truth.moved_after_write()) {
        return id + ": missed " + describe(missed) + "expected " +
               describe(truth.moved_after_write());
    }
    return {};
}

}  // namespace fuzz

namespace fuzz {

struct EstimatorCheck {
    std::uint64_t bytes = 0;
    std::uint64_t n_events = 0;
    oohsim::Micros simulated = 0;
    oohsim::Micros estimated = 0;
    double rel_error() const { return std::abs(simulated - estimated) / simulated; }
};

/// Random EPML micro-benchmark configuration, simulated and estimated.
inline EstimatorCheck estimator_config(const oohsim::CostTable& costs, std::uint64_t seed)
{
    using namespace oohsim;
    std::mt19937_64 rng(seed);
    const std::uint64_t bytes =
        std::uniform_int_distribution<std::uint64_t>(1'000'000, 200'000'000)(rng);
    MicroBenchSpec spec;
    spec.num_pages = pages_for(bytes, costs.page_size());
    spec.rounds = std::uniform_int_distribution<std::uint32_t>(1, 3)(rng);
    SimulationConfig cfg;
    cfg.tracker = TrackerConfig::of(Technique::Epml);
    cfg.scheduler.quantum = std::uniform_real_distribution<double>(1000.0, 20000.0)(rng);
    cfg.scheduler.competitors = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    Workload w = make_microbench(spec, costs.page_size());
    w.memory_bytes = bytes;
    Simulation sim(costs, cfg, std::move(w));
    const RunResult r = sim.run();
    const EpmlEstimate e = estimate_epml(r.ideal_us, r.ledger.counts().sched_events, costs, bytes);
    return {bytes, e.n_events, r.tracked_us, e.p_epml};
}

}  // namespace fuzz
