#include "oohsim/trackers.hpp"

#include <algorithm>
#include <limits>

namespace oohsim {

void TrackerConfig::validate() const
{
    const bool ring_based = technique == Technique::Spml || technique == Technique::Epml;
    if (ring_based && !(collection_interval > 0)) {
        throw SimError("collection_interval must be > 0 for " + std::string(to_string(technique)));
    }
    if (monitored_range && monitored_range->last < monitored_range->first) {
        throw SimError("monitored_range is empty");
    }
}

BottleneckBreakdown spml_bottleneck_breakdown(const IntervalResult& iv)
{
    BottleneckBreakdown b;
    const Micros total = iv.reverse_map_us + iv.walk_us + iv.copy_us + iv.other_us;
    if (!(total > 0)) {
        b.other_frac = 1.0;
        return b;
    }
    b.reverse_mapping_frac = iv.reverse_map_us / total;
    b.walk_frac = iv.walk_us / total;
    b.copy_frac = iv.copy_us / total;
    b.other_frac = 1.0 - b.reverse_mapping_frac - b.walk_frac - b.copy_frac;
    return b;
}

BottleneckBreakdown spml_bottleneck_breakdown(const TrackerPhaseReport& report)
{
    if (report.technique != Technique::Spml) {
        throw WrongTechnique("bottleneck breakdown requires spml, got " +
                             std::string(to_string(report.technique)));
    }
    IntervalResult sum;
    for (const auto& iv : report.intervals) {
        sum.reverse_map_us += iv.reverse_map_us;
        sum.walk_us += iv.walk_us;
        sum.copy_us += iv.copy_us;
        sum.other_us += iv.other_us;
    }
    return spml_bottleneck_breakdown(sum);
}

Tracker::Tracker(TrackerConfig cfg, GuestKernel& kernel, const CostTable& costs, CostLedger& ledger)
    : cfg_(cfg), kernel_(&kernel), costs_(&costs), ledger_(&ledger)
{
    cfg_.validate();
    report_.technique = cfg_.technique;
    kernel_->process(cfg_.target_pid);
}

Micros Tracker::per_page(Metric m) const
{
    return costs_->per_page(m, kernel_->tracked_bytes());
}

PhaseCost Tracker::initialize()
{
    const Pid pid = cfg_.target_pid;
    PhaseCost pc;
    pc.tracker = kernel_->register_tracked(pid, cfg_.technique);
    switch (cfg_.technique) {
    case Technique::Proc:
        pc.tracked = kernel_->clear_soft_dirty(pid);
        pc.tracker += pc.tracked;
        break;
    case Technique::Userfaultfd: {
        const auto range = cfg_.monitored_range.value_or(GuestPageTable::UffdRange{
            Gva{0}, Gva{std::numeric_limits<std::uint64_t>::max()}});
        pc.tracked = kernel_->uffd_register(pid, range);
        pc.tracker += pc.tracked;
        break;
    }
    case Technique::Spml:
    case Technique::Epml:
        break;
    }
    dropped_seen_ = kernel_->hypervisor().ring().dropped();
    initialized_ = true;
    report_.init_time += pc.tracker;
    return pc;
}

PhaseCost Tracker::handle_fault(FaultReason reason, Gva gva)
{
    const Pid pid = cfg_.target_pid;
    PhaseCost pc;
    ledger_->counts().faults++;
    switch (reason) {
    case FaultReason::SoftDirtyProtect: {
        if (cfg_.technique != Technique::Proc) {
            throw WrongTechnique("soft-dirty fault under " + std::string(to_string(cfg_.technique)));
        }
        kernel_->process(pid).pt.resolve_soft_dirty_fault(gva);
        pc.tracked = per_page(Metric::M5);
        charge(Entity::Tracked, Charge::M5, pc.tracked);
        break;
    }
    case FaultReason::UffdWriteProtect: {
        if (cfg_.technique != Technique::Userfaultfd) {
            throw WrongTechnique("userfaultfd fault under " +
                                 std::string(to_string(cfg_.technique)));
        }
        auto& p = kernel_->process(pid);
        p.state = ProcState::SuspendedOnFault;
        const Micros kernel_part = per_page(Metric::M5);
        const Micros user_part = per_page(Metric::M6);
        charge(Entity::Tracked, Charge::M5, kernel_part);
        charge(Entity::Tracked, Charge::M6, user_part);
        charge(Entity::Tracker, Charge::M6, user_part);
        faulted_.insert(gva);
        kernel_->uffd_resolve(pid, gva);
        pc.tracked = kernel_part + user_part;
        pc.tracker = user_part;
        break;
    }
    case FaultReason::NotPresent:
        throw SimError("not-present faults are handled by the kernel, not the Tracker");
    }
    return pc;
}

Micros Tracker::drain()
{
    const Pid pid = cfg_.target_pid;
    if (cfg_.technique == Technique::Spml) {
        auto gpas = kernel_->hypervisor().ring().consume(pid);
        ledger_->counts().drains++;
        const Micros copy = per_page(Metric::M18) * static_cast<double>(gpas.size());
        charge(Entity::Tracker, Charge::M18, copy);
        interval_copy_us_ += copy;
        Micros cost = copy;
        if (cfg_.walk_per_drain && !gpas.empty()) {
            const Micros walk = costs_->cost_of(Metric::M16, kernel_->tracked_bytes());
            charge(Entity::Tracker, Charge::M16, walk);
            interval_walk_us_ += walk;
            cost += walk;
        }
        staged_.insert(staged_.end(), gpas.begin(), gpas.end());
        return cost;
    }
    if (cfg_.technique == Technique::Epml) {
        const auto gvas = kernel_->consume_epml_ring();
        ledger_->counts().drains++;
        logged_.insert(gvas.begin(), gvas.end());
        return 0;
    }
    return 0;
}

std::vector<Gva> Tracker::resolve_staged(IntervalResult* into)
{
    const auto& pt = kernel_->process(cfg_.target_pid).pt;
    std::vector<Gva> out;
    out.reserve(staged_.size());
    for (const Gpa g : staged_) {
        std::optional<Gva> writer;
        if (writer_ != nullptr) {
            if (auto it = writer_->find(g); it != writer_->end()) {
                writer = it->second;
            }
        }
        if (auto gva = pt.reverse_map(g)) {
            out.push_back(*gva);
            if (into != nullptr && writer && *writer != *gva) {
                into->inaccurate.emplace_back(*gva, *writer);
            }
        } else if (into != nullptr && writer && pt.contains(*writer)) {
            into->missed.insert(*writer);
        }
    }
    staged_.clear();
    return out;
}

std::vector<Gva> Tracker::drain_ring()
{
    if (cfg_.technique == Technique::Epml) {
        const auto gvas = kernel_->consume_epml_ring();
        ledger_->counts().drains++;
        logged_.insert(gvas.begin(), gvas.end());
        return gvas;
    }
    if (cfg_.technique != Technique::Spml) {
        throw WrongTechnique("drain_ring requires a ring-based technique");
    }
    drain();
    const Micros rmap = per_page(Metric::M17) * static_cast<double>(staged_.size());
    charge(Entity::Tracker, Charge::M17, rmap);
    IntervalResult lost;
    auto out = resolve_staged(&lost);
    report_.missed.insert(lost.missed.begin(), lost.missed.end());
    return out;
}

std::pair<IntervalResult, PhaseCost> Tracker::collect(Micros now, bool rearm)
{
    const Pid pid = cfg_.target_pid;
    const auto& pt = kernel_->process(pid).pt;
    IntervalResult iv;
    iv.at = now;
    PhaseCost pc;
    switch (cfg_.technique) {
    case Technique::Proc: {
        auto snap = kernel_->read_pagemap(pid);
        iv.dirty.insert(snap.soft_dirty.begin(), snap.soft_dirty.end());
        iv.walk_us = snap.cost;
        pc.tracked += snap.cost;
        pc.tracker += snap.cost;
        if (rearm) {
            const Micros c = kernel_->clear_soft_dirty(pid);
            iv.other_us += c;
            pc.tracked += c;
            pc.tracker += c;
        }
        break;
    }
    case Technique::Userfaultfd: {
        for (const Gva g : faulted_) {
            if (pt.contains(g)) {
                iv.dirty.insert(g);
            }
        }
        faulted_.clear();
        if (rearm) {
            const Micros c = kernel_->uffd_rearm(pid);
            iv.other_us += c;
            pc.tracked += c;
            pc.tracker += c;
        }
        break;
    }
    case Technique::Spml: {
        const Micros before = interval_copy_us_;
        drain();
        const Micros final_copy = interval_copy_us_ - before;
        charge(Entity::Tracked, Charge::M18, final_copy);
        pc.tracked += final_copy;
        pc.tracker += final_copy;

        const std::size_t n = staged_.size();
        const Micros rmap = per_page(Metric::M17) * static_cast<double>(n);
        charge(Entity::Tracked, Charge::M17, rmap);
        charge(Entity::Tracker, Charge::M17, rmap);
        pc.tracked += rmap;
        pc.tracker += rmap;
        iv.reverse_map_us = rmap;

        Micros walk = interval_walk_us_;
        if (!cfg_.walk_per_drain && n > 0) {
            const Micros w = costs_->cost_of(Metric::M16, kernel_->tracked_bytes());
            charge(Entity::Tracked, Charge::M16, w);
            charge(Entity::Tracker, Charge::M16, w);
            pc.tracked += w;
            pc.tracker += w;
            walk += w;
        }
        iv.walk_us = walk;
        iv.copy_us = interval_copy_us_;

        for (const Gva g : resolve_staged(&iv)) {
            iv.dirty.insert(g);
        }
        for (const Gva g : iv.dirty) {
            iv.missed.erase(g);
        }
        const auto dropped = kernel_->hypervisor().ring().dropped();
        iv.dropped = dropped - dropped_seen_;
        dropped_seen_ = dropped;
        ledger_->counts().dropped += iv.dropped;
        interval_copy_us_ = 0;
        interval_walk_us_ = 0;
        break;
    }
    case Technique::Epml: {
        while (true) {
            const auto gvas = kernel_->consume_epml_ring();
            ledger_->counts().drains++;
            if (gvas.empty()) {
                break;
            }
            logged_.insert(gvas.begin(), gvas.end());
        }
        for (const Gva g : logged_) {
            if (pt.contains(g)) {
                iv.dirty.insert(g);
            }
        }
        logged_.clear();
        break;
    }
    }
    iv.collect_us = iv.reverse_map_us + iv.walk_us + iv.copy_us + iv.other_us;

    report_.collect_time += iv.collect_us;
    report_.dirty_set = iv.dirty;
    report_.missed = iv.missed;
    report_.inaccurate = iv.inaccurate;
    report_.dropped += iv.dropped;
    report_.intervals.push_back(iv);
    return {iv, pc};
}

PhaseCost Tracker::teardown()
{
    PhaseCost pc;
    if (!initialized_) {
        return pc;
    }
    pc.tracker = kernel_->unregister_tracked(cfg_.target_pid);
    initialized_ = false;
    return pc;
}

}  // namespace oohsim
