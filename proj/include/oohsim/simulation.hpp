#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <unordered_map>

#include "oohsim/address_space.hpp"
#include "oohsim/cost_model.hpp"
#include "oohsim/event_queue.hpp"
#include "oohsim/guest_kernel.hpp"
#include "oohsim/hypervisor.hpp"
#include "oohsim/trackers.hpp"
#include "oohsim/workload.hpp"

namespace oohsim {

struct SimulationConfig {
    // Untracked run when empty.
    std::optional<TrackerConfig> tracker;
    SchedulerConfig scheduler;
    std::size_t ring_capacity = 16384;
    std::size_t vcpus = 2;
    bool payloads = false;
    GpaPolicy gpa_policy = GpaPolicy::Fresh;
    // Virtual time budget for Tracked after initialization.
    Micros horizon = 60e6;
};

struct RunResult {
    std::optional<Technique> technique;
    std::uint64_t memory_bytes = 0;
    Micros ideal_us = 0;
    Micros tracked_us = 0;
    Micros tracker_us = 0;
    Micros init_us = 0;
    Micros init_suspension_us = 0;
    Micros collect_us = 0;
    Micros suspension_us = 0;
    Micros exploit_us = 0;
    Micros end_time = 0;
    std::uint64_t scheduler_events = 0;
    std::uint64_t ops_executed = 0;
    bool completed = false;
    std::optional<TrackerPhaseReport> report;
    CostLedger ledger;
};

class Simulation;

/// Exploitation-phase plugin run with Tracked frozen after each checkpoint
/// collection. Returns the time it took; it must charge the ledger itself.
using ExploitHook = std::function<Micros(Simulation&, const IntervalResult&)>;

/// Runs once when Tracked is about to start, after Tracker initialization.
using StartHook = std::function<void(Simulation&)>;

/// One Tracked process (pid 1) sharing a vCPU with competitor processes,
/// optionally tracked by a Tracker on another vCPU.
class Simulation {
public:
    static constexpr Pid kTrackedPid = 1;

    Simulation(const CostTable& costs, SimulationConfig cfg, Workload workload);
    // The table is referenced, not copied.
    Simulation(const CostTable&& costs, SimulationConfig cfg, Workload workload) = delete;

    void set_exploit(ExploitHook hook) { exploit_ = std::move(hook); }
    void set_start_hook(StartHook hook) { start_hook_ = std::move(hook); }

    RunResult run();

    const CostTable& costs() const { return *costs_; }
    GuestMemory& memory() { return mem_; }
    GuestKernel& kernel() { return kernel_; }
    Hypervisor& hypervisor() { return hv_; }
    CostLedger& ledger() { return ledger_; }
    EventQueue& queue() { return queue_; }
    Process& tracked() { return kernel_.process(kTrackedPid); }
    Tracker* tracker() { return tracker_.get(); }
    const Workload& workload() const { return workload_; }
    Micros vcpu_time() const { return vt_; }

private:
    enum class Block { None, Softirq, RingSpace };

    void schedule_in_tracked();
    void preempt();
    void competitor_slice_end();
    void run_tracked();
    void step_op();
    void do_write(const Op& op);
    void checkpoint();
    void finish();
    void softirq();
    void periodic_drain();
    void request_early_drain();
    void after_drain();

    void stall(Micros us);
    void advance(Micros us);
    bool ring_based() const;
    bool is_epml() const;

    const CostTable* costs_;
    SimulationConfig cfg_;
    Workload workload_;
    CostLedger ledger_;
    GuestMemory mem_;
    Hypervisor hv_;
    GuestKernel kernel_;
    Scheduler sched_;
    EventQueue queue_;
    std::unique_ptr<Tracker> tracker_;
    ExploitHook exploit_;
    StartHook start_hook_;
    std::unordered_map<Gpa, Gva> writer_;

    std::size_t op_ = 0;
    Micros compute_left_ = -1;
    Micros start_ = 0;
    Micros vt_ = 0;
    Micros slice_ = 0;
    Micros tracked_time_ = 0;
    Micros compute_time_ = 0;
    Micros exploit_time_ = 0;
    Micros init_suspension_ = 0;
    Micros init_tracker_ = 0;
    Micros teardown_ = 0;
    Block block_ = Block::None;
    bool running_ = false;
    bool finished_ = false;
    bool early_drain_pending_ = false;
    std::uint64_t ops_executed_ = 0;
};

}  // namespace oohsim
