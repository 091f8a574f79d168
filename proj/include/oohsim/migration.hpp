#pragma once

#include <cstdint>
#include <vector>

#include "oohsim/cost_model.hpp"
#include "oohsim/simulation.hpp"

namespace oohsim {

/// Pre-copy live migration of a second VM whose dirty pages are logged by
/// the hypervisor PML (enable_by_vmm).
struct MigrationJob {
    std::uint64_t vm_bytes = 256'000'000ULL;
    // Sequential page writes per second inside the migrating VM.
    double dirty_pages_per_s = 10000.0;
    // Stop-and-copy once a round has at most this many pages to send.
    std::uint64_t threshold_pages = 64;
    std::uint32_t max_rounds = 30;
};

struct MigrationRound {
    std::uint64_t pages = 0;
    Micros duration = 0;
};

struct MigrationReport {
    std::vector<MigrationRound> rounds;
    std::uint64_t pages_sent = 0;
    Micros total_us = 0;
    // Hypervisor CPU share left to the migration thread.
    double share = 1.0;
    std::uint64_t vmexits = 0;
    bool converged = false;
};

/// Runs the migration while the hypervisor also serves `concurrent_vmexits_per_s`
/// PML-full exits from another VM (0 for a migration alone).
MigrationReport run_migration(const CostTable& costs, const MigrationJob& job,
                              double concurrent_vmexits_per_s = 0);

/// PML-full vmexits per second of Tracked's execution in a finished run.
double vmexit_rate(const RunResult& r);

struct CoexistenceResult {
    double vm1_vmexits_per_s = 0;
    MigrationReport baseline;
    MigrationReport concurrent;
    double inflation_pct = 0;
};

/// Migration of VM2 alone, then while VM1 runs the micro-benchmark of
/// `vm1_bytes` under SPML.
CoexistenceResult coexistence_experiment(const CostTable& costs, const MigrationJob& job = {},
                                         std::uint64_t vm1_bytes = 100'000'000ULL);

}  // namespace oohsim
