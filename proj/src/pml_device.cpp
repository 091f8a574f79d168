#include "oohsim/pml_device.hpp"

#include <algorithm>
#include <string>

namespace oohsim {

BufferOutcome PmlBuffer::log(std::uint64_t value)
{
    if (index_ == kPmlIndexDisabled) {
        return BufferOutcome::Disabled;
    }
    if (index_ < 0 || paused_) {
        ++rejected_;
        return BufferOutcome::Full;
    }
    slots_[static_cast<std::size_t>(index_)] = value;
    --index_;
    return BufferOutcome::Logged;
}

std::size_t PmlBuffer::count() const
{
    if (index_ == kPmlIndexDisabled) {
        return 0;
    }
    return static_cast<std::size_t>(kPmlIndexStart - index_);
}

std::vector<std::uint64_t> PmlBuffer::entries() const
{
    std::vector<std::uint64_t> out;
    out.reserve(count());
    for (int i = kPmlIndexStart; i > index_ && i >= 0; --i) {
        if (index_ == kPmlIndexDisabled) break;
        out.push_back(slots_[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::vector<std::uint64_t> PmlBuffer::take_oldest(std::size_t n)
{
    auto all = entries();
    n = std::min(n, all.size());
    std::vector<std::uint64_t> taken(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    if (n == 0) {
        return taken;
    }
    const bool was_full = full();
    // Remaining entries move back to the top of the buffer.
    int slot = kPmlIndexStart;
    for (std::size_t i = n; i < all.size(); ++i) {
        slots_[static_cast<std::size_t>(slot--)] = all[i];
    }
    index_ = slot;
    // A partially drained full buffer stays paused until the guest resets it.
    if (was_full && index_ >= 0 && all.size() > n) {
        paused_ = true;
    }
    return taken;
}

void PmlBuffer::reset(int value)
{
    if (value != kPmlIndexStart && value != kPmlIndexDisabled) {
        throw InvalidValue("PML index may only be reset to 511 or 512, got " +
                           std::to_string(value));
    }
    index_ = value;
    paused_ = false;
}

LogResult PmlState::log_dirty(Gpa gpa, Gva gva, bool ept_transition, bool guest_transition)
{
    LogResult r;
    if (ept_transition) {
        r.hv = hv_.log(gpa.value);
    }
    if (guest_transition && epml_enabled_) {
        if (auto* buf = current_guest_buffer()) {
            r.guest = buf->log(gva.value);
        } else {
            r.guest = BufferOutcome::Disabled;
        }
    }
    return r;
}

void PmlState::allocate_guest_buffer(Hpa at)
{
    guest_buffers_.try_emplace(at);
}

void PmlState::release_guest_buffer(Hpa at)
{
    guest_buffers_.erase(at);
    if (guest_pml_address_ == at) {
        guest_pml_address_.reset();
    }
}

PmlBuffer* PmlState::guest_buffer_at(Hpa at)
{
    auto it = guest_buffers_.find(at);
    return it == guest_buffers_.end() ? nullptr : &it->second;
}

PmlBuffer* PmlState::current_guest_buffer()
{
    return guest_pml_address_ ? guest_buffer_at(*guest_pml_address_) : nullptr;
}

int PmlState::guest_pml_index() const
{
    if (!guest_pml_address_) {
        return kPmlIndexDisabled;
    }
    auto it = guest_buffers_.find(*guest_pml_address_);
    return it == guest_buffers_.end() ? kPmlIndexDisabled : it->second.index();
}

void PmlState::reset_index_guest(int value)
{
    auto* buf = current_guest_buffer();
    if (buf == nullptr) {
        if (value != kPmlIndexStart && value != kPmlIndexDisabled) {
            throw InvalidValue("PML index may only be reset to 511 or 512");
        }
        return;
    }
    buf->reset(value);
}

ShadowVmcs ShadowVmcs::for_epml(PmlState& target, const Ept& ept)
{
    ShadowVmcs s(target, ept);
    s.allow_read(VmcsField::GuestPmlAddress);
    s.allow_read(VmcsField::GuestPmlIndex);
    s.allow_write(VmcsField::GuestPmlAddress);
    s.allow_write(VmcsField::GuestPmlIndex);
    return s;
}

VmxResult ShadowVmcs::guest_vmwrite(VmcsField field, std::uint64_t value)
{
    if (!write_bitmap_.contains(field)) {
        ++traps_;
        return VmxResult::Trap;
    }
    ++vmwrites_;
    switch (field) {
    case VmcsField::GuestPmlAddress: {
        const auto hpa = ept_->translate(Gpa{value});
        if (!hpa) {
            throw TranslationFault("Guest PML Address GPA " + std::to_string(value) +
                                   " is not EPT-mapped");
        }
        target_->set_guest_pml_address(*hpa);
        break;
    }
    case VmcsField::GuestPmlIndex:
        target_->reset_index_guest(static_cast<int>(value));
        break;
    case VmcsField::PmlAddress:
        target_->set_pml_address(Hpa{value});
        break;
    case VmcsField::PmlIndex:
        target_->reset_index_hv(static_cast<int>(value));
        break;
    case VmcsField::VmcsLinkPointer:
        break;
    }
    return VmxResult::Ok;
}

VmreadResult ShadowVmcs::guest_vmread(VmcsField field) const
{
    if (!read_bitmap_.contains(field)) {
        ++traps_;
        return {VmxResult::Trap, 0};
    }
    ++vmreads_;
    switch (field) {
    case VmcsField::GuestPmlAddress:
        return {VmxResult::Ok, target_->guest_pml_address() ? target_->guest_pml_address()->value : 0};
    case VmcsField::GuestPmlIndex:
        return {VmxResult::Ok, static_cast<std::uint64_t>(
                                   static_cast<std::int64_t>(target_->guest_pml_index()))};
    case VmcsField::PmlAddress:
        return {VmxResult::Ok, target_->pml_address().value};
    case VmcsField::PmlIndex:
        return {VmxResult::Ok, static_cast<std::uint64_t>(
                                   static_cast<std::int64_t>(target_->hv_buffer().index()))};
    case VmcsField::VmcsLinkPointer:
        return {VmxResult::Ok, 0};
    }
    return {VmxResult::Ok, 0};
}

}  // namespace oohsim
