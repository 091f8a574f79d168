#include "oohsim/guest_kernel.hpp"

#include <algorithm>

namespace oohsim {

Scheduler::Scheduler(SchedulerConfig cfg) : cfg_(cfg)
{
    if (!(cfg_.quantum > 0)) {
        throw SimError("scheduler quantum must be > 0");
    }
}

void Scheduler::add(Pid pid)
{
    if (current_ == pid || std::find(queue_.begin(), queue_.end(), pid) != queue_.end()) {
        return;
    }
    queue_.push_back(pid);
}

void Scheduler::remove(Pid pid)
{
    queue_.erase(std::remove(queue_.begin(), queue_.end(), pid), queue_.end());
    if (current_ == pid) {
        current_.reset();
    }
}

std::pair<std::optional<Pid>, std::optional<Pid>> Scheduler::rotate()
{
    std::optional<Pid> out = current_;
    if (out) {
        queue_.push_back(*out);
        current_.reset();
    }
    if (!queue_.empty()) {
        current_ = queue_.front();
        queue_.pop_front();
    }
    if (out && current_ == out) {
        return {std::nullopt, std::nullopt};
    }
    return {out, current_};
}

void Scheduler::dispatch(Pid pid)
{
    if (current_) {
        queue_.push_back(*current_);
    }
    queue_.erase(std::remove(queue_.begin(), queue_.end(), pid), queue_.end());
    current_ = pid;
}

std::optional<Pid> Scheduler::vacate()
{
    auto out = current_;
    current_.reset();
    return out;
}

std::size_t GvaRing::push(const std::vector<Gva>& gvas)
{
    const std::size_t n = std::min(gvas.size(), free_slots());
    entries_.insert(entries_.end(), gvas.begin(), gvas.begin() + static_cast<std::ptrdiff_t>(n));
    delivered_ += n;
    return n;
}

std::vector<Gva> GvaRing::consume()
{
    std::vector<Gva> out(entries_.begin(), entries_.end());
    entries_.clear();
    return out;
}

GuestKernel::GuestKernel(GuestMemory& memory, Hypervisor& hv, const CostTable& costs,
                         CostLedger& ledger, std::size_t ring_capacity, VcpuId vcpu)
    : memory_(&memory),
      hv_(&hv),
      costs_(&costs),
      ledger_(&ledger),
      vcpu_(vcpu),
      epml_ring_(ring_capacity),
      shadow_(ShadowVmcs::for_epml(hv.vcpu(vcpu).pml, memory.ept()))
{
    hv_->on_ring_full([this] { wake_tracker(); });
}

Process& GuestKernel::spawn(Pid pid)
{
    auto [it, inserted] = procs_.try_emplace(pid, std::make_unique<Process>(pid));
    if (!inserted) {
        throw SimError("pid " + std::to_string(pid) + " already exists");
    }
    return *it->second;
}

Process& GuestKernel::process(Pid pid)
{
    auto it = procs_.find(pid);
    if (it == procs_.end()) {
        throw UnknownPid("unknown pid " + std::to_string(pid));
    }
    return *it->second;
}

const Process& GuestKernel::process(Pid pid) const
{
    auto it = procs_.find(pid);
    if (it == procs_.end()) {
        throw UnknownPid("unknown pid " + std::to_string(pid));
    }
    return *it->second;
}

Micros GuestKernel::copy_cost(std::size_t entries) const
{
    return costs_->per_page(Metric::M18, tracked_bytes_) * static_cast<double>(entries);
}

Micros GuestKernel::vmwrite(VmcsField f, std::uint64_t value)
{
    shadow_.guest_vmwrite(f, value);
    ledger_->counts().vmwrites++;
    const Micros c = costs_->fixed(Metric::M8);
    charge(Entity::Tracked, Charge::M8, c);
    return c;
}

Micros GuestKernel::vmread(VmcsField f, std::uint64_t& value)
{
    value = shadow_.guest_vmread(f).value;
    ledger_->counts().vmreads++;
    const Micros c = costs_->fixed(Metric::M7);
    charge(Entity::Tracked, Charge::M7, c);
    return c;
}

void GuestKernel::wake_tracker()
{
    if (wake_tracker_) {
        wake_tracker_();
    }
}

Micros GuestKernel::register_tracked(Pid pid, Technique technique)
{
    auto& p = process(pid);
    if (uio_.registered_pids.contains(pid)) {
        throw AlreadyRegistered("pid " + std::to_string(pid) + " already registered");
    }
    const bool first = uio_.registered_pids.empty();
    uio_.registered_pids.insert(pid);
    uio_.technique[pid] = technique;
    p.tracked = true;

    Micros cost = 0;
    auto hypercall = [&](HypercallKind k, Metric m) {
        const Micros c = hv_->hypercall(k, vcpu_, tracked_bytes_, pid);
        ledger_->counts().hypercalls++;
        charge(Entity::Tracker, charge_of(m), c);
        cost += c;
    };
    if (technique == Technique::Spml || technique == Technique::Epml) {
        const Micros ioctl = costs_->fixed(Metric::M3);
        charge(Entity::Tracker, Charge::M3, ioctl);
        cost += ioctl;
    }
    if (technique == Technique::Spml && (first || !hv_->vcpu(vcpu_).guest_initialized)) {
        hypercall(HypercallKind::InitPml, Metric::M9);
    }
    if (technique == Technique::Epml) {
        if (!hv_->vcpu(vcpu_).shadow_initialized) {
            hypercall(HypercallKind::InitShadowVmcs, Metric::M10);
        }
        const Gpa buf = memory_->allocate();
        const auto hpa = memory_->ept().translate(buf);
        hv_->vcpu(vcpu_).pml.allocate_guest_buffer(*hpa);
        uio_.guest_buffers[pid] = buf;
    }
    return cost;
}

Micros GuestKernel::unregister_tracked(Pid pid)
{
    if (!uio_.registered_pids.contains(pid)) {
        throw NotRegistered("pid " + std::to_string(pid) + " is not registered");
    }
    const Technique technique = uio_.technique.at(pid);
    uio_.registered_pids.erase(pid);
    uio_.technique.erase(pid);
    process(pid).tracked = false;

    Micros cost = 0;
    auto hypercall = [&](HypercallKind k, Metric m) {
        const Micros c = hv_->hypercall(k, vcpu_, tracked_bytes_, pid);
        ledger_->counts().hypercalls++;
        charge(Entity::Tracker, charge_of(m), c);
        cost += c;
    };
    if (technique == Technique::Spml || technique == Technique::Epml) {
        const Micros ioctl = costs_->fixed(Metric::M4);
        charge(Entity::Tracker, Charge::M4, ioctl);
        cost += ioctl;
    }
    const bool others = std::any_of(uio_.technique.begin(), uio_.technique.end(),
                                    [&](const auto& kv) { return kv.second == technique; });
    if (technique == Technique::Spml && !others && hv_->vcpu(vcpu_).guest_initialized) {
        hypercall(HypercallKind::DeactivatePml, Metric::M11);
    }
    if (technique == Technique::Epml) {
        if (auto it = uio_.guest_buffers.find(pid); it != uio_.guest_buffers.end()) {
            const auto hpa = memory_->ept().translate(it->second);
            hv_->vcpu(vcpu_).pml.release_guest_buffer(*hpa);
            memory_->release(it->second);
            uio_.guest_buffers.erase(it);
        }
        if (!others && hv_->vcpu(vcpu_).shadow_initialized) {
            hypercall(HypercallKind::DeactivateShadowVmcs, Metric::M12);
        }
    }
    return cost;
}

Micros GuestKernel::on_schedule(Pid pid, SchedDirection dir)
{
    if (!uio_.registered_pids.contains(pid)) {
        return 0;
    }
    ledger_->counts().sched_events++;
    const Technique technique = uio_.technique.at(pid);
    Micros stall = 0;
    if (technique == Technique::Spml) {
        const bool in = dir == SchedDirection::In;
        const auto kind = in ? HypercallKind::EnableLogging : HypercallKind::DisableLogging;
        const Micros c = hv_->hypercall(kind, vcpu_, tracked_bytes_, pid);
        ledger_->counts().hypercalls++;
        charge(Entity::Tracked, in ? Charge::M13 : Charge::M14, c);
        stall += c;
    } else if (technique == Technique::Epml) {
        const Gpa buf = uio_.guest_buffers.at(pid);
        if (dir == SchedDirection::In) {
            stall += vmwrite(VmcsField::GuestPmlAddress, buf.value);
            stall += vmwrite(VmcsField::GuestPmlIndex, kPmlIndexStart);
        } else {
            std::uint64_t index = 0;
            stall += vmread(VmcsField::GuestPmlIndex, index);
            if (auto* b = guest_buffer(pid)) {
                const auto entries = b->take_oldest(b->count());
                const Micros c = copy_cost(entries.size());
                charge(Entity::Tracked, Charge::M18, c);
                stall += c;
                move_to_ring(pid, entries);
            }
            stall += vmwrite(VmcsField::GuestPmlIndex, kPmlIndexDisabled);
        }
    }
    return stall;
}

void GuestKernel::move_to_ring(Pid pid, std::vector<std::uint64_t> raw)
{
    auto& pt = process(pid).pt;
    std::vector<Gva> gvas;
    gvas.reserve(raw.size());
    for (const auto v : raw) {
        gvas.emplace_back(v);
        pt.clear_guest_logged(Gva{v});
    }
    auto& held = uio_.held[pid];
    // Older held entries go first to keep logging order.
    if (!held.empty()) {
        std::vector<Gva> pending(held.begin(), held.end());
        held.clear();
        pending.insert(pending.end(), gvas.begin(), gvas.end());
        gvas.swap(pending);
    }
    const std::size_t stored = epml_ring_.push(gvas);
    if (stored < gvas.size()) {
        held.insert(held.end(), gvas.begin() + static_cast<std::ptrdiff_t>(stored), gvas.end());
        wake_tracker();
    }
}

PmlBuffer* GuestKernel::guest_buffer(Pid pid)
{
    auto it = uio_.guest_buffers.find(pid);
    if (it == uio_.guest_buffers.end()) {
        return nullptr;
    }
    const auto hpa = memory_->ept().translate(it->second);
    return hpa ? hv_->vcpu(vcpu_).pml.guest_buffer_at(*hpa) : nullptr;
}

bool GuestKernel::guest_buffer_blocked(Pid pid)
{
    auto* b = guest_buffer(pid);
    return b != nullptr && (b->full() || b->paused());
}

void GuestKernel::raise_guest_buffer_full(Pid)
{
    // Top half: posted self-IPI, no vmexit; only schedules the softirq.
    ledger_->counts().self_ipis++;
    uio_.pending_softirq = true;
}

Micros GuestKernel::deliver_guest_buffer_full(Pid pid)
{
    uio_.pending_softirq = false;
    auto* b = guest_buffer(pid);
    if (b == nullptr || b->count() == 0) {
        return 0;
    }
    auto& held = uio_.held[pid];
    const std::size_t room = epml_ring_.free_slots() > held.size()
                                 ? epml_ring_.free_slots() - held.size()
                                 : 0;
    const std::size_t n = std::min(room, b->count());
    auto entries = b->take_oldest(n);
    Micros stall = copy_cost(entries.size());
    charge(Entity::Tracked, Charge::M18, stall);
    move_to_ring(pid, std::move(entries));
    if (b->count() == 0) {
        stall += vmwrite(VmcsField::GuestPmlIndex, kPmlIndexStart);
    } else {
        wake_tracker();
    }
    return stall;
}

Micros GuestKernel::clear_soft_dirty(Pid pid)
{
    process(pid).pt.clear_soft_dirty();
    const Micros c = costs_->cost_of(Metric::M15, tracked_bytes_);
    charge(Entity::Tracked, Charge::M15, c);
    charge(Entity::Tracker, Charge::M15, c);
    return c;
}

GuestKernel::PagemapSnapshot GuestKernel::read_pagemap(Pid pid)
{
    PagemapSnapshot s;
    s.soft_dirty = process(pid).pt.soft_dirty_pages();
    s.cost = costs_->cost_of(Metric::M16, tracked_bytes_);
    charge(Entity::Tracked, Charge::M16, s.cost);
    charge(Entity::Tracker, Charge::M16, s.cost);
    return s;
}

Micros GuestKernel::ioctl_cost()
{
    const Micros m1 = costs_->fixed(Metric::M1);
    const Micros m2 = costs_->cost_of(Metric::M2, tracked_bytes_);
    for (const Entity e : {Entity::Tracked, Entity::Tracker}) {
        charge(e, Charge::M1, m1);
        charge(e, Charge::M2, m2);
    }
    return m1 + m2;
}

Micros GuestKernel::uffd_register(Pid pid, GuestPageTable::UffdRange range)
{
    auto& pt = process(pid).pt;
    pt.add_uffd_range(range);
    pt.set_uffd_wp(range.first, range.last, true);
    return ioctl_cost();
}

void GuestKernel::uffd_resolve(Pid pid, Gva gva)
{
    auto& p = process(pid);
    if (!p.pt.in_uffd_range(gva)) {
        throw NotRegistered("GVA page " + std::to_string(gva.value) +
                            " is not in a registered userfaultfd range");
    }
    p.pt.clear_uffd_wp(gva);
    if (p.state == ProcState::SuspendedOnFault) {
        p.state = ProcState::Runnable;
    }
}

Micros GuestKernel::uffd_rearm(Pid pid)
{
    auto& pt = process(pid).pt;
    for (const auto& r : pt.uffd_ranges()) {
        pt.set_uffd_wp(r.first, r.last, true);
    }
    return ioctl_cost();
}

std::vector<Gva> GuestKernel::consume_epml_ring()
{
    auto out = epml_ring_.consume();
    for (auto& [pid, held] : uio_.held) {
        if (held.empty()) {
            continue;
        }
        std::vector<Gva> pending(held.begin(), held.end());
        held.clear();
        const std::size_t stored = epml_ring_.push(pending);
        held.insert(held.end(), pending.begin() + static_cast<std::ptrdiff_t>(stored),
                    pending.end());
    }
    return out;
}

}  // namespace oohsim
