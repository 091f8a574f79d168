#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "oohsim/address_space.hpp"
#include "oohsim/types.hpp"

namespace oohsim {

inline constexpr int kPmlEntries = 512;
inline constexpr int kPmlIndexStart = 511;
inline constexpr int kPmlIndexDisabled = 512;

class InvalidValue : public SimError {
public:
    using SimError::SimError;
};

enum class BufferOutcome { Logged, Full, Disabled, NotRequested };

/// One 512-entry PML buffer with its decrementing index. The index lives in
/// the VMCS; it is kept here next to the slots it addresses.
///
/// index in [0, 511]: next free slot. -1: underflowed (full). 512: disabled.
class PmlBuffer {
public:
    BufferOutcome log(std::uint64_t value);

    /// Entries in logging order (slot 511 first).
    std::vector<std::uint64_t> entries() const;
    /// Remove and return the `count` oldest entries, compacting the rest.
    std::vector<std::uint64_t> take_oldest(std::size_t count);
    std::size_t count() const;

    int index() const { return index_; }
    /// Only the two protocol values 511 and 512 are accepted.
    void reset(int value);
    bool full() const { return index_ < 0; }
    bool disabled() const { return index_ == kPmlIndexDisabled; }

    bool paused() const { return paused_; }
    /// Log attempts refused because the buffer was full or paused.
    std::uint64_t rejected() const { return rejected_; }

private:
    std::array<std::uint64_t, kPmlEntries> slots_{};
    int index_ = kPmlIndexDisabled;
    bool paused_ = false;
    std::uint64_t rejected_ = 0;
};

enum class VmcsField {
    PmlAddress,
    PmlIndex,
    GuestPmlAddress,
    GuestPmlIndex,
    VmcsLinkPointer,
};

struct LogResult {
    BufferOutcome hv = BufferOutcome::NotRequested;
    BufferOutcome guest = BufferOutcome::NotRequested;
};

/// Per-vCPU PML state: the hypervisor-level buffer of GPAs and, with the
/// extension enabled, the guest-level buffer of GVAs it currently points at.
class PmlState {
public:
    /// Logs gpa into the hypervisor buffer if `ept_transition`, and gva into the
    /// guest buffer if `guest_transition` and the extension is on.
    LogResult log_dirty(Gpa gpa, Gva gva, bool ept_transition = true,
                        bool guest_transition = true);

    PmlBuffer& hv_buffer() { return hv_; }
    const PmlBuffer& hv_buffer() const { return hv_; }

    bool epml_enabled() const { return epml_enabled_; }
    void set_epml_enabled(bool on) { epml_enabled_ = on; }

    Hpa pml_address() const { return pml_address_; }
    void set_pml_address(Hpa a) { pml_address_ = a; }

    /// Guest-level buffers live in host memory; the device logs into the one
    /// at guest_pml_address.
    void allocate_guest_buffer(Hpa at);
    void release_guest_buffer(Hpa at);
    PmlBuffer* guest_buffer_at(Hpa at);
    PmlBuffer* current_guest_buffer();
    std::optional<Hpa> guest_pml_address() const { return guest_pml_address_; }
    void set_guest_pml_address(Hpa a) { guest_pml_address_ = a; }

    int guest_pml_index() const;
    void reset_index_hv(int value) { hv_.reset(value); }
    void reset_index_guest(int value);

private:
    PmlBuffer hv_;
    Hpa pml_address_{};
    bool epml_enabled_ = false;
    std::optional<Hpa> guest_pml_address_;
    std::unordered_map<Hpa, PmlBuffer> guest_buffers_;
};

enum class VmxResult { Ok, Trap };

struct VmreadResult {
    VmxResult status = VmxResult::Ok;
    std::uint64_t value = 0;
};

/// Guest-accessible shadow VMCS, linked to one vCPU's PmlState. Access outside
/// the read/write bitmaps traps to the hypervisor.
class ShadowVmcs {
public:
    ShadowVmcs(PmlState& target, const Ept& ept) : target_(&target), ept_(&ept) {}

    /// Bitmaps that expose the guest-level PML fields only.
    static ShadowVmcs for_epml(PmlState& target, const Ept& ept);

    void allow_read(VmcsField f) { read_bitmap_.insert(f); }
    void allow_write(VmcsField f) { write_bitmap_.insert(f); }

    /// Writing GuestPmlAddress takes a GPA and stores its HPA translation.
    /// Throws TranslationFault if the GPA has no EPT entry and InvalidValue
    /// for an index other than 511/512.
    VmxResult guest_vmwrite(VmcsField field, std::uint64_t value);
    VmreadResult guest_vmread(VmcsField field) const;

    std::uint64_t vmwrites() const { return vmwrites_; }
    std::uint64_t vmreads() const { return vmreads_; }
    std::uint64_t traps() const { return traps_; }

private:
    PmlState* target_;
    const Ept* ept_;
    std::set<VmcsField> read_bitmap_;
    std::set<VmcsField> write_bitmap_;
    std::uint64_t vmwrites_ = 0;
    mutable std::uint64_t vmreads_ = 0;
    mutable std::uint64_t traps_ = 0;
};

}  // namespace oohsim
