#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <vector>

#include "oohsim/address_space.hpp"
#include "oohsim/cost_model.hpp"
#include "oohsim/hypervisor.hpp"
#include "oohsim/pml_device.hpp"
#include "oohsim/types.hpp"

namespace oohsim {

class AlreadyRegistered : public SimError {
public:
    using SimError::SimError;
};

class NotRegistered : public SimError {
public:
    using SimError::SimError;
};

class UnknownPid : public SimError {
public:
    using SimError::SimError;
};

enum class ProcState { Runnable, Running, SuspendedOnFault };

struct Process {
    explicit Process(Pid p) : pid(p), pt(p) {}

    Pid pid;
    GuestPageTable pt;
    bool tracked = false;
    ProcState state = ProcState::Runnable;
};

struct SchedulerConfig {
    Micros quantum = 10000.0;
    // Runnable processes sharing the Tracked vCPU.
    std::size_t competitors = 1;
};

enum class SchedDirection { In, Out };

/// Round-robin run queue of one vCPU.
class Scheduler {
public:
    explicit Scheduler(SchedulerConfig cfg);

    const SchedulerConfig& config() const { return cfg_; }
    void add(Pid pid);
    void remove(Pid pid);
    std::optional<Pid> current() const { return current_; }

    /// Preempt the running process and pick the next one in order.
    /// Returns {out, in}; either may be empty.
    std::pair<std::optional<Pid>, std::optional<Pid>> rotate();
    /// Put `pid` on the CPU directly (first dispatch).
    void dispatch(Pid pid);
    /// Remove the running process from the CPU without picking another.
    std::optional<Pid> vacate();

    void record(bool tracked) { tracked_events_ += tracked ? 1 : 0; }
    std::uint64_t tracked_events() const { return tracked_events_; }

private:
    SchedulerConfig cfg_;
    std::deque<Pid> queue_;
    std::optional<Pid> current_;
    std::uint64_t tracked_events_ = 0;
};

/// Flat GVA ring filled by the EPML softirq.
class GvaRing {
public:
    explicit GvaRing(std::size_t capacity = 16384) : capacity_(capacity) {}

    std::size_t push(const std::vector<Gva>& gvas);
    std::vector<Gva> consume();
    std::size_t free_slots() const { return capacity_ - entries_.size(); }
    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::uint64_t delivered() const { return delivered_; }

private:
    std::size_t capacity_;
    std::deque<Gva> entries_;
    std::uint64_t delivered_ = 0;
};

struct UioModuleState {
    std::set<Pid> registered_pids;
    std::map<Pid, Technique> technique;
    // EPML: per-pid guest-level buffer location.
    std::map<Pid, Gpa> guest_buffers;
    // EPML entries moved out of a buffer at schedule-out that did not fit the ring.
    std::map<Pid, std::deque<Gva>> held;
    bool pending_softirq = false;
    bool callbacks_installed() const { return !registered_pids.empty(); }
};

/// Guest OS model: processes, scheduler callbacks, the UIO tracking module
/// and the /proc and userfaultfd kernel facilities. Every method charges the
/// ledger and returns the time the calling context is stalled.
class GuestKernel {
public:
    GuestKernel(GuestMemory& memory, Hypervisor& hv, const CostTable& costs, CostLedger& ledger,
                std::size_t ring_capacity = 16384, VcpuId vcpu = 0);

    Process& spawn(Pid pid);
    Process& process(Pid pid);
    const Process& process(Pid pid) const;
    bool has_process(Pid pid) const { return procs_.contains(pid); }

    /// Tracked memory size used to look up size-dependent costs.
    void set_tracked_bytes(std::uint64_t bytes) { tracked_bytes_ = bytes; }
    std::uint64_t tracked_bytes() const { return tracked_bytes_; }

    /// Returns the Tracker-side cost of registration.
    Micros register_tracked(Pid pid, Technique technique);
    Micros unregister_tracked(Pid pid);
    bool is_registered(Pid pid) const { return uio_.registered_pids.contains(pid); }

    /// Scheduler callback. Returns the stall on the Tracked vCPU.
    Micros on_schedule(Pid pid, SchedDirection dir);

    // EPML interrupt path.
    bool guest_buffer_blocked(Pid pid);
    void raise_guest_buffer_full(Pid pid);
    Micros deliver_guest_buffer_full(Pid pid);
    PmlBuffer* guest_buffer(Pid pid);

    // /proc soft-dirty.
    Micros clear_soft_dirty(Pid pid);
    struct PagemapSnapshot {
        std::vector<Gva> soft_dirty;
        Micros cost = 0;
    };
    PagemapSnapshot read_pagemap(Pid pid);

    // userfaultfd write-protect mode.
    Micros uffd_register(Pid pid, GuestPageTable::UffdRange range);
    void uffd_resolve(Pid pid, Gva gva);
    Micros uffd_rearm(Pid pid);

    GvaRing& epml_ring() { return epml_ring_; }
    /// Tracker side: take all GVA records, then refill from held entries.
    std::vector<Gva> consume_epml_ring();

    ShadowVmcs& shadow() { return shadow_; }
    const UioModuleState& uio() const { return uio_; }
    Hypervisor& hypervisor() { return *hv_; }
    VcpuId vcpu() const { return vcpu_; }

    /// Called when the Tracker should drain a ring early.
    void on_wake_tracker(std::function<void()> cb) { wake_tracker_ = std::move(cb); }

private:
    void charge(Entity e, Charge c, Micros us) { ledger_->charge(e, c, us); }
    Micros copy_cost(std::size_t entries) const;
    Micros ioctl_cost();
    Micros vmwrite(VmcsField f, std::uint64_t value);
    Micros vmread(VmcsField f, std::uint64_t& value);
    void move_to_ring(Pid pid, std::vector<std::uint64_t> gvas);
    void wake_tracker();

    GuestMemory* memory_;
    Hypervisor* hv_;
    const CostTable* costs_;
    CostLedger* ledger_;
    VcpuId vcpu_;
    std::map<Pid, std::unique_ptr<Process>> procs_;
    UioModuleState uio_;
    GvaRing epml_ring_;
    ShadowVmcs shadow_;
    std::uint64_t tracked_bytes_ = 0;
    std::function<void()> wake_tracker_;
};

}  // namespace oohsim
