#include "oohsim/simulation.hpp"

#include <algorithm>

namespace oohsim {

Simulation::Simulation(const CostTable& costs, SimulationConfig cfg, Workload workload)
    : costs_(&costs),
      cfg_(cfg),
      workload_(std::move(workload)),
      mem_(costs.page_size(), cfg.payloads, cfg.gpa_policy),
      hv_(mem_, costs, std::max<std::size_t>(1, cfg.vcpus), cfg.ring_capacity),
      kernel_(mem_, hv_, costs, ledger_, cfg.ring_capacity, 0),
      sched_(cfg.scheduler)
{
    if (cfg_.tracker) {
        cfg_.tracker->target_pid = kTrackedPid;
        cfg_.tracker->validate();
    }
    if (cfg_.horizon < 0) {
        throw SimError("horizon must be >= 0");
    }
}

bool Simulation::ring_based() const
{
    return cfg_.tracker && (cfg_.tracker->technique == Technique::Spml ||
                            cfg_.tracker->technique == Technique::Epml);
}

bool Simulation::is_epml() const
{
    return cfg_.tracker && cfg_.tracker->technique == Technique::Epml;
}

void Simulation::stall(Micros us)
{
    tracked_time_ += us;
    vt_ += us;
    slice_ += us;
}

void Simulation::advance(Micros us)
{
    compute_time_ += us;
    tracked_time_ += us;
    vt_ += us;
    slice_ += us;
}

RunResult Simulation::run()
{
    auto& tracked = kernel_.spawn(kTrackedPid);
    for (std::size_t i = 0; i < cfg_.scheduler.competitors; ++i) {
        kernel_.spawn(static_cast<Pid>(kTrackedPid + 1 + i));
    }
    for (const Gva g : workload_.premapped) {
        tracked.pt.map(mem_, g);
    }
    kernel_.set_tracked_bytes(workload_.memory_bytes);
    kernel_.on_wake_tracker([this] { request_early_drain(); });

    if (cfg_.tracker) {
        tracker_ = std::make_unique<Tracker>(*cfg_.tracker, kernel_, *costs_, ledger_);
        if (cfg_.tracker->technique == Technique::Spml) {
            tracker_->set_provenance(&writer_);
        }
        const PhaseCost pc = tracker_->initialize();
        init_suspension_ = pc.tracked;
        init_tracker_ = pc.tracker;
        tracked_time_ += pc.tracked;
    }
    // Tracked starts once the Tracker is ready.
    start_ = init_tracker_;
    vt_ = start_;

    sched_.add(kTrackedPid);
    for (std::size_t i = 0; i < cfg_.scheduler.competitors; ++i) {
        sched_.add(static_cast<Pid>(kTrackedPid + 1 + i));
    }
    queue_.push(start_, EventKind::Schedule, [this] {
        if (start_hook_) {
            start_hook_(*this);
        }
        sched_.dispatch(kTrackedPid);
        schedule_in_tracked();
    });
    if (ring_based()) {
        queue_.push(start_ + cfg_.tracker->collection_interval, EventKind::RingDrain,
                    [this] { periodic_drain(); });
    }
    while (queue_.step()) {
    }
    if (!finished_) {
        vt_ = std::max(vt_, queue_.now());
        finish();
    }

    RunResult r;
    r.technique = cfg_.tracker ? std::optional<Technique>(cfg_.tracker->technique) : std::nullopt;
    r.memory_bytes = workload_.memory_bytes;
    r.ideal_us = compute_time_;
    r.tracked_us = tracked_time_;
    r.suspension_us = tracked_time_ - compute_time_;
    r.init_us = init_tracker_;
    r.init_suspension_us = init_suspension_;
    r.exploit_us = exploit_time_;
    r.tracker_us = init_tracker_ + (tracked_time_ - init_suspension_) + teardown_;
    r.end_time = vt_;
    r.scheduler_events = sched_.tracked_events();
    r.ops_executed = ops_executed_;
    r.completed = op_ >= workload_.ops.size();
    if (tracker_) {
        auto rep = tracker_->report();
        rep.exploit_time = exploit_time_;
        rep.tracked_suspension_total = r.suspension_us;
        rep.monitor_span = vt_ - start_;
        r.collect_us = rep.collect_time;
        r.report = std::move(rep);
    }
    r.ledger = ledger_;
    return r;
}

void Simulation::schedule_in_tracked()
{
    if (finished_) {
        return;
    }
    running_ = true;
    sched_.record(tracked().tracked);
    vt_ = std::max(vt_, queue_.now());
    slice_ = 0;
    stall(kernel_.on_schedule(kTrackedPid, SchedDirection::In));
    queue_.push(vt_, EventKind::Write, [this] { run_tracked(); });
}

void Simulation::preempt()
{
    if (finished_ || !running_) {
        return;
    }
    auto [out, in] = sched_.rotate();
    if (!out) {
        return;
    }
    running_ = false;
    sched_.record(tracked().tracked);
    stall(kernel_.on_schedule(kTrackedPid, SchedDirection::Out));
    queue_.push(vt_ + cfg_.scheduler.quantum, EventKind::Schedule,
                [this] { competitor_slice_end(); });
}

void Simulation::competitor_slice_end()
{
    if (finished_) {
        return;
    }
    auto [out, in] = sched_.rotate();
    if (in == kTrackedPid) {
        schedule_in_tracked();
    } else {
        queue_.push(queue_.now() + cfg_.scheduler.quantum, EventKind::Schedule,
                    [this] { competitor_slice_end(); });
    }
}

void Simulation::run_tracked()
{
    while (!finished_ && running_ && block_ == Block::None) {
        if (op_ >= workload_.ops.size() || vt_ >= start_ + cfg_.horizon) {
            finish();
            return;
        }
        if (cfg_.scheduler.competitors > 0 && slice_ >= cfg_.scheduler.quantum) {
            queue_.push(vt_, EventKind::Schedule, [this] { preempt(); });
            return;
        }
        if (!queue_.empty() && queue_.next_time() <= vt_) {
            queue_.push(vt_, EventKind::Write, [this] { run_tracked(); });
            return;
        }
        step_op();
    }
}

void Simulation::step_op()
{
    const Op& op = workload_.ops[op_];
    auto& pt = tracked().pt;
    switch (op.kind) {
    case OpKind::Write:
        if (is_epml() && kernel_.guest_buffer_blocked(kTrackedPid)) {
            if (!kernel_.uio().pending_softirq) {
                kernel_.raise_guest_buffer_full(kTrackedPid);
                queue_.push(vt_, EventKind::SelfIpi, [this] {
                    queue_.push(queue_.now(), EventKind::Softirq, [this] { softirq(); });
                });
            }
            block_ = Block::Softirq;
            return;
        }
        do_write(op);
        break;
    case OpKind::Unmap:
        if (pt.contains(op.gva)) {
            pt.unmap(mem_, op.gva);
        }
        break;
    case OpKind::Relocate:
        if (pt.contains(op.gva)) {
            pt.relocate(mem_, op.gva);
        }
        break;
    case OpKind::Compute: {
        if (compute_left_ < 0) {
            compute_left_ = op.duration;
        }
        Micros chunk = compute_left_;
        if (cfg_.scheduler.competitors > 0) {
            chunk = std::min(chunk, std::max<Micros>(0, cfg_.scheduler.quantum - slice_));
        }
        advance(chunk);
        compute_left_ -= chunk;
        if (compute_left_ > 0) {
            return;
        }
        compute_left_ = -1;
        break;
    }
    case OpKind::Checkpoint:
        checkpoint();
        break;
    }
    ++op_;
    ++ops_executed_;
}

void Simulation::do_write(const Op& op)
{
    auto& pt = tracked().pt;
    WriteOutcome out;
    for (int attempt = 0;; ++attempt) {
        if (attempt > 4) {
            throw SimError("write to GVA page " + std::to_string(op.gva.value) +
                           " keeps faulting");
        }
        out = pt.write(mem_, op.gva, cfg_.payloads ? std::optional(op.value) : std::nullopt);
        if (!out.faulted) {
            break;
        }
        queue_.note(EventKind::PageFault);
        if (out.reason == FaultReason::NotPresent) {
            pt.map(mem_, op.gva);
            continue;
        }
        if (!tracker_) {
            throw SimError("protection fault without a Tracker");
        }
        stall(tracker_->handle_fault(out.reason, op.gva).tracked);
    }
    if (tracker_ && tracker_->technique() == Technique::Spml) {
        writer_[out.gpa] = op.gva;
    }
    if (out.wants_log()) {
        auto& v = hv_.vcpu(0);
        const LogResult r =
            v.pml.log_dirty(out.gpa, op.gva, out.ept_dirty_transition, out.guest_log_transition);
        if (r.hv == BufferOutcome::Full) {
            queue_.note(EventKind::VmExit);
            ledger_.counts().vmexits++;
            hv_.handle_pml_full_vmexit(0);
            ledger_.charge(Entity::Hypervisor, Charge::VmExit, costs_->timing().hv_vmexit_us);
            if (v.flags.enable_by_guest) {
                const Micros c = costs_->timing().spml_vmexit_us;
                ledger_.charge(Entity::Tracked, Charge::VmExit, c);
                stall(c);
            }
            if (v.pml.hv_buffer().log(out.gpa.value) != BufferOutcome::Logged) {
                throw SimError("PML buffer not re-armed after vmexit");
            }
        }
        if (r.guest == BufferOutcome::Full) {
            throw SimError("guest-level PML buffer overflow");
        }
    }
    advance(costs_->timing().page_write_us);
}

void Simulation::checkpoint()
{
    if (!tracker_) {
        return;
    }
    sched_.record(tracked().tracked);
    stall(kernel_.on_schedule(kTrackedPid, SchedDirection::Out));
    auto [iv, pc] = tracker_->collect(vt_, true);
    stall(pc.tracked);
    if (exploit_) {
        const Micros e = exploit_(*this, iv);
        exploit_time_ += e;
        stall(e);
    }
    sched_.record(tracked().tracked);
    stall(kernel_.on_schedule(kTrackedPid, SchedDirection::In));
}

void Simulation::finish()
{
    if (finished_) {
        return;
    }
    finished_ = true;
    if (running_) {
        running_ = false;
        sched_.vacate();
        sched_.record(tracked().tracked);
        stall(kernel_.on_schedule(kTrackedPid, SchedDirection::Out));
    }
    if (!tracker_) {
        return;
    }
    const bool ended_on_checkpoint = !workload_.ops.empty() && op_ == workload_.ops.size() &&
                                     workload_.ops.back().kind == OpKind::Checkpoint;
    if (!ended_on_checkpoint) {
        auto [iv, pc] = tracker_->collect(vt_, false);
        stall(pc.tracked);
    }
    teardown_ = tracker_->teardown().tracker;
}

void Simulation::softirq()
{
    if (finished_) {
        return;
    }
    const Micros copy = kernel_.deliver_guest_buffer_full(kTrackedPid);
    const Micros wait = queue_.now() - vt_;
    if (wait > 0) {
        ledger_.charge(Entity::Tracked, Charge::RingWait, wait);
        stall(wait);
    }
    stall(copy);
    if (kernel_.guest_buffer_blocked(kTrackedPid)) {
        block_ = Block::RingSpace;
        return;
    }
    block_ = Block::None;
    if (running_) {
        queue_.push(vt_, EventKind::Write, [this] { run_tracked(); });
    }
}

void Simulation::after_drain()
{
    if (block_ == Block::RingSpace) {
        block_ = Block::Softirq;
        queue_.push(queue_.now(), EventKind::Softirq, [this] { softirq(); });
    }
}

void Simulation::periodic_drain()
{
    if (finished_) {
        return;
    }
    tracker_->drain();
    after_drain();
    queue_.push(queue_.now() + cfg_.tracker->collection_interval, EventKind::RingDrain,
                [this] { periodic_drain(); });
}

void Simulation::request_early_drain()
{
    if (early_drain_pending_ || finished_) {
        return;
    }
    early_drain_pending_ = true;
    queue_.push(std::max(queue_.now(), vt_), EventKind::RingDrain, [this] {
        early_drain_pending_ = false;
        if (finished_) {
            return;
        }
        tracker_->drain();
        after_drain();
    });
}

}  // namespace oohsim
