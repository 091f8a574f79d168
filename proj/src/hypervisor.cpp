#include "oohsim/hypervisor.hpp"

#include <algorithm>

namespace oohsim {

std::size_t SpmlRingBuffer::append(Pid pid, const std::vector<Gpa>& gpas)
{
    if (gpas.empty()) {
        return 0;
    }
    std::size_t stored = 0;
    for (const Gpa g : gpas) {
        const bool same_block = !blocks_.empty() && blocks_.back().pid == pid;
        const std::size_t need = same_block ? 1 : 3;
        if (used_ + need > capacity_) {
            full_ = true;
            dropped_ += gpas.size() - stored;
            return stored;
        }
        if (!same_block) {
            blocks_.push_back(Block{pid, {}});
            used_ += 2;
        }
        blocks_.back().addresses.push_back(g);
        ++used_;
        ++stored;
        ++delivered_;
    }
    if (used_ == capacity_) {
        full_ = true;
    }
    return stored;
}

std::vector<Gpa> SpmlRingBuffer::consume(std::optional<Pid> pid)
{
    std::vector<Gpa> out;
    std::deque<Block> keep;
    for (auto& b : blocks_) {
        if (!pid || b.pid == *pid) {
            out.insert(out.end(), b.addresses.begin(), b.addresses.end());
            used_ -= 2 + b.count();
        } else {
            keep.push_back(std::move(b));
        }
    }
    blocks_ = std::move(keep);
    full_ = false;
    return out;
}

std::size_t SpmlRingBuffer::pending_entries() const
{
    std::size_t n = 0;
    for (const auto& b : blocks_) {
        n += b.count();
    }
    return n;
}

std::string_view to_string(HypercallKind k)
{
    switch (k) {
    case HypercallKind::InitPml: return "init_pml";
    case HypercallKind::DeactivatePml: return "deactivate_pml";
    case HypercallKind::InitShadowVmcs: return "init_shadow_vmcs";
    case HypercallKind::DeactivateShadowVmcs: return "deactivate_shadow_vmcs";
    case HypercallKind::EnableLogging: return "enable_logging";
    case HypercallKind::DisableLogging: return "disable_logging";
    }
    return "?";
}

std::string_view to_string(CoordinationRequest r)
{
    switch (r) {
    case CoordinationRequest::GuestDisable: return "guest_disable";
    case CoordinationRequest::GuestEnable: return "guest_enable";
    case CoordinationRequest::VmmDisable: return "vmm_disable";
    case CoordinationRequest::VmmEnable: return "vmm_enable";
    case CoordinationRequest::SchedOut: return "sched_out";
    case CoordinationRequest::SchedIn: return "sched_in";
    }
    return "?";
}

Hypervisor::Hypervisor(GuestMemory& memory, const CostTable& costs, std::size_t vcpus,
                       std::size_t ring_capacity)
    : memory_(&memory), costs_(&costs), vcpus_(vcpus), ring_(ring_capacity)
{
    if (vcpus == 0) {
        throw SimError("a VM needs at least one vCPU");
    }
    for (std::size_t i = 0; i < vcpus_.size(); ++i) {
        vcpus_[i].pml.set_pml_address(Hpa{0xF0000000ULL + i * 0x1000});
    }
}

VcpuPml& Hypervisor::vcpu(VcpuId id)
{
    if (id >= vcpus_.size()) {
        throw SimError("unknown vCPU " + std::to_string(id));
    }
    return vcpus_[id];
}

const VcpuPml& Hypervisor::vcpu(VcpuId id) const
{
    if (id >= vcpus_.size()) {
        throw SimError("unknown vCPU " + std::to_string(id));
    }
    return vcpus_[id];
}

Micros Hypervisor::hypercall(HypercallKind kind, VcpuId id, std::uint64_t tracked_bytes, Pid pid)
{
    auto& v = vcpu(id);
    Metric m = Metric::M9;
    switch (kind) {
    case HypercallKind::InitPml:
        m = Metric::M9;
        if (!v.guest_initialized) {
            memory_->ept().clear_all_dirty();
            v.guest_initialized = true;
        }
        coordinate(CoordinationRequest::GuestEnable, id);
        break;
    case HypercallKind::DeactivatePml:
        m = Metric::M11;
        if (!v.guest_initialized) {
            throw ProtocolError("deactivate_pml before init_pml");
        }
        coordinate(CoordinationRequest::GuestDisable, id);
        v.guest_initialized = false;
        break;
    case HypercallKind::InitShadowVmcs:
        m = Metric::M10;
        v.shadow_initialized = true;
        v.pml.set_epml_enabled(true);
        break;
    case HypercallKind::DeactivateShadowVmcs:
        m = Metric::M12;
        if (!v.shadow_initialized) {
            throw ProtocolError("deactivate_shadow_vmcs before init_shadow_vmcs");
        }
        v.shadow_initialized = false;
        v.pml.set_epml_enabled(false);
        break;
    case HypercallKind::EnableLogging:
        m = Metric::M13;
        if (!v.guest_initialized) {
            throw ProtocolError("enable_logging before init_pml");
        }
        coordinate(CoordinationRequest::SchedIn, id, pid);
        break;
    case HypercallKind::DisableLogging:
        m = Metric::M14;
        if (!v.guest_initialized) {
            throw ProtocolError("disable_logging before init_pml");
        }
        coordinate(CoordinationRequest::SchedOut, id);
        break;
    }
    return costs_->cost_of(m, tracked_bytes);
}

Actions Hypervisor::flush(VcpuId id)
{
    Actions a;
    auto& v = vcpus_[id];
    auto& buf = v.pml.hv_buffer();
    if (buf.disabled() || buf.count() == 0) {
        return a;
    }
    const auto raw = buf.take_oldest(buf.count());
    std::vector<Gpa> gpas;
    gpas.reserve(raw.size());
    for (const auto value : raw) {
        const Gpa g{value};
        gpas.push_back(g);
        // Re-arm logging for the drained page.
        memory_->ept().clear_dirty(g);
    }
    if (v.flags.enable_by_vmm) {
        migration_log_.insert(migration_log_.end(), gpas.begin(), gpas.end());
        a.to_migration_log = gpas.size();
    }
    if (v.flags.enable_by_guest && v.flags.sched_in) {
        const auto before = ring_.dropped();
        a.to_ring = ring_.append(v.current_pid, gpas);
        a.ring_dropped = ring_.dropped() - before;
    }
    return a;
}

void Hypervisor::rearm(VcpuId id, Actions& a)
{
    auto& v = vcpus_[id];
    a.armed = v.flags.logging_required();
    v.pml.reset_index_hv(a.armed ? kPmlIndexStart : kPmlIndexDisabled);
    if (ring_.full() && (a.to_ring > 0 || a.ring_dropped > 0)) {
        a.interrupt_injected = true;
        ++interrupts_;
        if (ring_full_cb_) {
            ring_full_cb_();
        }
    }
}

Actions Hypervisor::handle_pml_full_vmexit(VcpuId id)
{
    vcpu(id);
    ++vmexits_;
    Actions a = flush(id);
    rearm(id, a);
    return a;
}

Actions Hypervisor::coordinate(CoordinationRequest request, VcpuId id, Pid pid)
{
    auto& v = vcpu(id);
    Actions a = flush(id);
    switch (request) {
    case CoordinationRequest::GuestDisable: v.flags.enable_by_guest = false; break;
    case CoordinationRequest::GuestEnable: v.flags.enable_by_guest = true; break;
    case CoordinationRequest::VmmDisable: v.flags.enable_by_vmm = false; break;
    case CoordinationRequest::VmmEnable: v.flags.enable_by_vmm = true; break;
    case CoordinationRequest::SchedOut: v.flags.sched_in = false; break;
    case CoordinationRequest::SchedIn:
        v.flags.sched_in = true;
        v.current_pid = pid;
        break;
    }
    rearm(id, a);
    return a;
}

std::vector<Gpa> Hypervisor::take_migration_log()
{
    std::vector<Gpa> out;
    out.swap(migration_log_);
    return out;
}

}  // namespace oohsim
