#include "oohsim/address_space.hpp"

#include <algorithm>
#include <cstring>

namespace oohsim {

void Ept::map(Gpa gpa, Hpa hpa)
{
    entries_[gpa] = EptEntry{hpa, false};
}

std::optional<Hpa> Ept::translate(Gpa gpa) const
{
    auto it = entries_.find(gpa);
    if (it == entries_.end()) {
        return std::nullopt;
    }
    return it->second.hpa;
}

bool Ept::set_dirty(Gpa gpa)
{
    auto it = entries_.find(gpa);
    if (it == entries_.end()) {
        throw TranslationFault("EPT violation: GPA " + std::to_string(gpa.value) + " not mapped");
    }
    const bool was_clean = !it->second.dirty;
    it->second.dirty = true;
    return was_clean;
}

bool Ept::is_dirty(Gpa gpa) const
{
    auto it = entries_.find(gpa);
    return it != entries_.end() && it->second.dirty;
}

void Ept::clear_dirty(Gpa gpa)
{
    if (auto it = entries_.find(gpa); it != entries_.end()) {
        it->second.dirty = false;
    }
}

void Ept::clear_all_dirty()
{
    for (auto& [gpa, e] : entries_) {
        e.dirty = false;
    }
}

void PageStore::write_word(Hpa hpa, std::size_t word, std::uint64_t value)
{
    if (!enabled_) {
        return;
    }
    auto& page = contents_[hpa];
    if (page.empty()) {
        page.assign(page_size_, 0);
    }
    const std::size_t off = (word * sizeof(value)) % page_size_;
    std::memcpy(page.data() + off, &value, std::min(sizeof(value), page_size_ - off));
}

std::vector<std::uint8_t> PageStore::read(Hpa hpa) const
{
    auto it = contents_.find(hpa);
    if (it == contents_.end()) {
        return std::vector<std::uint8_t>(page_size_, 0);
    }
    return it->second;
}

void PageStore::copy(Hpa from, Hpa to)
{
    if (!enabled_) {
        return;
    }
    auto it = contents_.find(from);
    if (it == contents_.end()) {
        contents_.erase(to);
    } else {
        contents_[to] = it->second;
    }
}

void PageStore::erase(Hpa hpa)
{
    contents_.erase(hpa);
}

GuestMemory::GuestMemory(std::size_t page_size, bool payloads, GpaPolicy policy,
                         std::uint64_t hpa_base)
    : store_(page_size, payloads), policy_(policy), hpa_base_(hpa_base)
{}

Hpa GuestMemory::hpa_of(Gpa gpa) const
{
    return Hpa{hpa_base_ + gpa.value};
}

Gpa GuestMemory::allocate()
{
    if (policy_ == GpaPolicy::Reuse && !free_.empty()) {
        const Gpa g = free_.back();
        free_.pop_back();
        return g;
    }
    const Gpa g{next_gpa_++};
    ept_.map(g, hpa_of(g));
    return g;
}

void GuestMemory::release(Gpa gpa)
{
    store_.erase(hpa_of(gpa));
    if (policy_ == GpaPolicy::Reuse) {
        free_.push_back(gpa);
    }
}

std::optional<Translation> GuestPageTable::translate(Gva gva) const
{
    auto it = entries_.find(gva);
    if (it == entries_.end()) {
        return std::nullopt;
    }
    return Translation{it->second.gpa, it->second.flags};
}

std::optional<Gva> GuestPageTable::reverse_map(Gpa gpa) const
{
    auto it = by_gpa_.find(gpa);
    if (it == by_gpa_.end() || it->second.empty()) {
        return std::nullopt;
    }
    return it->second.front();
}

bool GuestPageTable::in_uffd_range(Gva gva) const
{
    return std::any_of(uffd_ranges_.begin(), uffd_ranges_.end(),
                       [&](const UffdRange& r) { return r.first <= gva && gva <= r.last; });
}

PageFlags GuestPageTable::fresh_flags(Gva gva) const
{
    PageFlags f;
    f.present = true;
    f.writable = !soft_dirty_armed_;
    f.uffd_wp = in_uffd_range(gva);
    return f;
}

void GuestPageTable::link(Gva gva, Gpa gpa)
{
    auto& list = by_gpa_[gpa];
    list.insert(std::lower_bound(list.begin(), list.end(), gva), gva);
}

void GuestPageTable::unlink(Gva gva, Gpa gpa)
{
    auto it = by_gpa_.find(gpa);
    if (it == by_gpa_.end()) {
        return;
    }
    auto& list = it->second;
    list.erase(std::remove(list.begin(), list.end(), gva), list.end());
    if (list.empty()) {
        by_gpa_.erase(it);
    }
}

Gpa GuestPageTable::map(GuestMemory& mem, Gva gva)
{
    if (entries_.contains(gva)) {
        throw SimError("GVA page " + std::to_string(gva.value) + " already mapped");
    }
    const Gpa gpa = mem.allocate();
    entries_.emplace(gva, Entry{gpa, fresh_flags(gva)});
    link(gva, gpa);
    return gpa;
}

void GuestPageTable::map_alias(GuestMemory& mem, Gva gva, Gpa gpa)
{
    if (entries_.contains(gva)) {
        throw SimError("GVA page " + std::to_string(gva.value) + " already mapped");
    }
    if (!mem.ept().contains(gpa)) {
        throw TranslationFault("GPA " + std::to_string(gpa.value) + " has no EPT entry");
    }
    entries_.emplace(gva, Entry{gpa, fresh_flags(gva)});
    link(gva, gpa);
}

void GuestPageTable::unmap(GuestMemory& mem, Gva gva)
{
    auto it = entries_.find(gva);
    if (it == entries_.end()) {
        throw UnknownMapping("unmap of unmapped GVA page " + std::to_string(gva.value));
    }
    const Gpa gpa = it->second.gpa;
    entries_.erase(it);
    unlink(gva, gpa);
    if (!by_gpa_.contains(gpa)) {
        mem.release(gpa);
    }
}

void GuestPageTable::remap(Gva gva_old, Gva gva_new)
{
    auto it = entries_.find(gva_old);
    if (it == entries_.end()) {
        throw UnknownMapping("remap of unmapped GVA page " + std::to_string(gva_old.value));
    }
    if (entries_.contains(gva_new)) {
        throw SimError("remap target GVA page " + std::to_string(gva_new.value) +
                       " already mapped");
    }
    const Entry e = it->second;
    entries_.erase(it);
    unlink(gva_old, e.gpa);
    entries_.emplace(gva_new, e);
    link(gva_new, e.gpa);
}

Gpa GuestPageTable::relocate(GuestMemory& mem, Gva gva)
{
    auto it = entries_.find(gva);
    if (it == entries_.end()) {
        throw UnknownMapping("relocate of unmapped GVA page " + std::to_string(gva.value));
    }
    const Gpa old_gpa = it->second.gpa;
    const Gpa new_gpa = mem.allocate();
    mem.store().copy(mem.hpa_of(old_gpa), mem.hpa_of(new_gpa));
    it->second.gpa = new_gpa;
    unlink(gva, old_gpa);
    link(gva, new_gpa);
    if (!by_gpa_.contains(old_gpa)) {
        mem.release(old_gpa);
    }
    return new_gpa;
}

WriteOutcome GuestPageTable::write(GuestMemory& mem, Gva gva, std::optional<std::uint64_t> value)
{
    WriteOutcome out;
    auto it = entries_.find(gva);
    if (it == entries_.end() || !it->second.flags.present) {
        out.faulted = true;
        out.reason = FaultReason::NotPresent;
        return out;
    }
    auto& e = it->second;
    out.gpa = e.gpa;
    if (e.flags.uffd_wp) {
        out.faulted = true;
        out.reason = FaultReason::UffdWriteProtect;
        return out;
    }
    if (!e.flags.writable) {
        out.faulted = true;
        out.reason = FaultReason::SoftDirtyProtect;
        return out;
    }
    e.flags.dirty = true;
    out.ept_dirty_transition = mem.ept().set_dirty(e.gpa);
    out.guest_log_transition = !e.flags.guest_logged;
    e.flags.guest_logged = true;
    if (value) {
        mem.store().write_word(mem.hpa_of(e.gpa), 0, *value);
    }
    return out;
}

void GuestPageTable::clear_soft_dirty()
{
    soft_dirty_armed_ = true;
    for (auto& [gva, e] : entries_) {
        e.flags.soft_dirty = false;
        e.flags.writable = false;
    }
}

void GuestPageTable::resolve_soft_dirty_fault(Gva gva)
{
    auto it = entries_.find(gva);
    if (it == entries_.end()) {
        throw UnknownMapping("soft-dirty fault on unmapped GVA page " + std::to_string(gva.value));
    }
    it->second.flags.soft_dirty = true;
    it->second.flags.writable = true;
}

void GuestPageTable::set_uffd_wp(Gva first, Gva last, bool wp)
{
    for (auto& [gva, e] : entries_) {
        if (first <= gva && gva <= last) {
            e.flags.uffd_wp = wp;
        }
    }
}

void GuestPageTable::clear_uffd_wp(Gva gva)
{
    if (auto it = entries_.find(gva); it != entries_.end()) {
        it->second.flags.uffd_wp = false;
    }
}

void GuestPageTable::clear_guest_logged(Gva gva)
{
    if (auto it = entries_.find(gva); it != entries_.end()) {
        it->second.flags.guest_logged = false;
    }
}

std::vector<Gva> GuestPageTable::soft_dirty_pages() const
{
    std::vector<Gva> out;
    for (const auto& [gva, e] : entries_) {
        if (e.flags.soft_dirty) {
            out.push_back(gva);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Gva> GuestPageTable::dirty_pages() const
{
    std::vector<Gva> out;
    for (const auto& [gva, e] : entries_) {
        if (e.flags.dirty) {
            out.push_back(gva);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void GuestPageTable::clear_pte_dirty()
{
    for (auto& [gva, e] : entries_) {
        e.flags.dirty = false;
    }
}

std::vector<Gva> GuestPageTable::mapped_pages() const
{
    std::vector<Gva> out;
    out.reserve(entries_.size());
    for (const auto& [gva, e] : entries_) {
        out.push_back(gva);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace oohsim
