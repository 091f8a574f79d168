#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oohsim/address_space.hpp"
#include "oohsim/cost_model.hpp"
#include "oohsim/pml_device.hpp"
#include "oohsim/types.hpp"

namespace oohsim {

class ProtocolError : public SimError {
public:
    using SimError::SimError;
};

/// Which level currently uses PML on a vCPU.
struct CoexistenceFlags {
    bool enable_by_vmm = false;
    bool enable_by_guest = false;
    bool sched_in = false;

    bool logging_required() const { return enable_by_vmm || (enable_by_guest && sched_in); }
    auto operator<=>(const CoexistenceFlags&) const = default;
};

/// Ring shared between the hypervisor and the guest for SPML. Organised in
/// blocks whose first two slots hold the owning PID and its address count.
class SpmlRingBuffer {
public:
    struct Block {
        Pid pid = 0;
        std::deque<Gpa> addresses;
        std::size_t count() const { return addresses.size(); }
    };

    explicit SpmlRingBuffer(std::size_t capacity = 16384) : capacity_(capacity) {}

    /// Append under `pid`'s block. Returns the number actually stored; the
    /// rest are counted as dropped once the ring is full.
    std::size_t append(Pid pid, const std::vector<Gpa>& gpas);

    /// Consume everything belonging to `pid` (all blocks when nullopt).
    /// Clears the full condition.
    std::vector<Gpa> consume(std::optional<Pid> pid = std::nullopt);

    bool full() const { return full_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t used_slots() const { return used_; }
    std::size_t pending_entries() const;
    std::uint64_t dropped() const { return dropped_; }
    std::uint64_t delivered() const { return delivered_; }
    const std::deque<Block>& blocks() const { return blocks_; }

private:
    std::size_t capacity_;
    std::size_t used_ = 0;  // headers + addresses
    bool full_ = false;
    std::deque<Block> blocks_;
    std::uint64_t dropped_ = 0;
    std::uint64_t delivered_ = 0;
};

enum class HypercallKind {
    InitPml,
    DeactivatePml,
    InitShadowVmcs,
    DeactivateShadowVmcs,
    EnableLogging,
    DisableLogging,
};

std::string_view to_string(HypercallKind k);

enum class CoordinationRequest {
    GuestDisable,
    GuestEnable,
    VmmDisable,
    VmmEnable,
    SchedOut,
    SchedIn,
};

inline constexpr CoordinationRequest kAllRequests[] = {
    CoordinationRequest::GuestDisable, CoordinationRequest::GuestEnable,
    CoordinationRequest::VmmDisable,   CoordinationRequest::VmmEnable,
    CoordinationRequest::SchedOut,     CoordinationRequest::SchedIn,
};

std::string_view to_string(CoordinationRequest r);

/// What a flush or coordination step did.
struct Actions {
    std::size_t to_migration_log = 0;
    std::size_t to_ring = 0;
    std::size_t ring_dropped = 0;
    bool armed = false;
    bool interrupt_injected = false;
};

struct VcpuPml {
    PmlState pml;
    CoexistenceFlags flags;
    Pid current_pid = 0;
    bool guest_initialized = false;
    bool shadow_initialized = false;
};

/// Bare-metal hypervisor view of one VM: PML buffers per vCPU, the SPML
/// ring, the migration dirty log and the coexistence protocol.
class Hypervisor {
public:
    Hypervisor(GuestMemory& memory, const CostTable& costs, std::size_t vcpus = 1,
               std::size_t ring_capacity = 16384);

    VcpuPml& vcpu(VcpuId id);
    const VcpuPml& vcpu(VcpuId id) const;
    std::size_t vcpu_count() const { return vcpus_.size(); }

    /// Returns the cost of the hypercall in µs (M9..M14).
    Micros hypercall(HypercallKind kind, VcpuId vcpu, std::uint64_t tracked_bytes = 0,
                     Pid pid = 0);

    /// Drain a full hypervisor-level buffer, route its entries and re-arm.
    Actions handle_pml_full_vmexit(VcpuId vcpu);

    /// Coexistence protocol: flush per current flags, update flags, re-arm.
    Actions coordinate(CoordinationRequest request, VcpuId vcpu, Pid pid = 0);

    SpmlRingBuffer& ring() { return ring_; }
    const SpmlRingBuffer& ring() const { return ring_; }

    const std::vector<Gpa>& migration_log() const { return migration_log_; }
    std::vector<Gpa> take_migration_log();

    std::uint64_t vmexits() const { return vmexits_; }
    std::uint64_t interrupts_injected() const { return interrupts_; }

    /// Called when the ring fills (virtual interrupt to the guest).
    void on_ring_full(std::function<void()> cb) { ring_full_cb_ = std::move(cb); }

    GuestMemory& memory() { return *memory_; }

private:
    Actions flush(VcpuId vcpu);
    void rearm(VcpuId vcpu, Actions& a);

    GuestMemory* memory_;
    const CostTable* costs_;
    std::vector<VcpuPml> vcpus_;
    SpmlRingBuffer ring_;
    std::vector<Gpa> migration_log_;
    std::uint64_t vmexits_ = 0;
    std::uint64_t interrupts_ = 0;
    std::function<void()> ring_full_cb_;
};

struct ModelCheckResult {
    std::uint64_t states = 0;
    std::uint64_t nodes = 0;
    std::vector<std::string> violations;
};

/// Exhaustive search over interleavings of the coordination requests up to
/// `depth`, with `writes_per_step` fresh-page writes after every request.
/// Checks that the buffer is armed iff some party requires logging and that
/// every logged entry reaches exactly the parties entitled to it.
ModelCheckResult model_check_coordination(const CostTable& costs, int depth = 12,
                                          int writes_per_step = 1);

}  // namespace oohsim
