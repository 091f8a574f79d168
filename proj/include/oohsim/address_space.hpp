#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "oohsim/types.hpp"

namespace oohsim {

struct PageFlags {
    bool present = false;
    bool writable = false;
    bool dirty = false;
    bool soft_dirty = false;
    // Write-protected by a userfaultfd registration.
    bool uffd_wp = false;
    // Set once the GVA has been written into a guest-level PML buffer;
    // cleared by the guest when it drains that buffer.
    bool guest_logged = false;
};

struct Translation {
    Gpa gpa;
    PageFlags flags;
};

class UnknownMapping : public SimError {
public:
    using SimError::SimError;
};

class TranslationFault : public SimError {
public:
    using SimError::SimError;
};

struct EptEntry {
    Hpa hpa;
    bool dirty = false;
};

/// Second-level translation GPA -> HPA with the EPT dirty bit.
class Ept {
public:
    void map(Gpa gpa, Hpa hpa);
    std::optional<Hpa> translate(Gpa gpa) const;
    bool contains(Gpa gpa) const { return entries_.contains(gpa); }

    /// Sets the dirty bit; returns true iff it was previously clear.
    bool set_dirty(Gpa gpa);
    bool is_dirty(Gpa gpa) const;
    void clear_dirty(Gpa gpa);
    void clear_all_dirty();
    std::size_t size() const { return entries_.size(); }

private:
    std::unordered_map<Gpa, EptEntry> entries_;
};

/// Page payloads keyed by HPA. Absent pages read as zero.
class PageStore {
public:
    explicit PageStore(std::size_t page_size = kDefaultPageSize, bool enabled = false)
        : page_size_(page_size), enabled_(enabled)
    {}

    bool enabled() const { return enabled_; }
    std::size_t page_size() const { return page_size_; }

    void write_word(Hpa hpa, std::size_t word, std::uint64_t value);
    std::vector<std::uint8_t> read(Hpa hpa) const;
    void copy(Hpa from, Hpa to);
    void erase(Hpa hpa);

private:
    std::size_t page_size_;
    bool enabled_;
    std::unordered_map<Hpa, std::vector<std::uint8_t>> contents_;
};

enum class GpaPolicy {
    Fresh,  // never hand out a GPA twice
    Reuse,  // LIFO reuse of released GPAs
};

/// VM-wide physical memory: GPA allocator, EPT and page payloads.
class GuestMemory {
public:
    explicit GuestMemory(std::size_t page_size = kDefaultPageSize, bool payloads = false,
                         GpaPolicy policy = GpaPolicy::Fresh, std::uint64_t hpa_base = 0x100000);

    Gpa allocate();
    void release(Gpa gpa);

    Ept& ept() { return ept_; }
    const Ept& ept() const { return ept_; }
    PageStore& store() { return store_; }
    const PageStore& store() const { return store_; }
    std::size_t page_size() const { return store_.page_size(); }

    Hpa hpa_of(Gpa gpa) const;

private:
    Ept ept_;
    PageStore store_;
    GpaPolicy policy_;
    std::uint64_t hpa_base_;
    std::uint64_t next_gpa_ = 1;
    std::vector<Gpa> free_;
};

enum class FaultReason { NotPresent, SoftDirtyProtect, UffdWriteProtect };

struct WriteOutcome {
    bool faulted = false;
    FaultReason reason = FaultReason::NotPresent;
    Gpa gpa;
    // Dirty transitions that make the PML hardware log this write.
    bool ept_dirty_transition = false;
    bool guest_log_transition = false;

    bool wants_log() const { return ept_dirty_transition || guest_log_transition; }
};

/// Per-process GVA -> GPA map. Several GVAs may alias one GPA.
class GuestPageTable {
public:
    explicit GuestPageTable(Pid pid) : pid_(pid) {}

    Pid pid() const { return pid_; }

    std::optional<Translation> translate(Gva gva) const;

    /// Lowest GVA page currently mapping `gpa`, or nullopt when lost.
    std::optional<Gva> reverse_map(Gpa gpa) const;

    /// Demand-map `gva` to a freshly allocated GPA. Throws SimError if mapped.
    Gpa map(GuestMemory& mem, Gva gva);
    /// Map `gva` onto an existing GPA (aliasing).
    void map_alias(GuestMemory& mem, Gva gva, Gpa gpa);
    void unmap(GuestMemory& mem, Gva gva);
    /// Move the backing of gva_old to gva_new; gva_old becomes unmapped.
    void remap(Gva gva_old, Gva gva_new);
    /// Move gva's contents to a fresh GPA (guest page migration); the old
    /// GPA is released. Returns the new GPA.
    Gpa relocate(GuestMemory& mem, Gva gva);

    /// One write instruction. Faults leave every bit untouched.
    WriteOutcome write(GuestMemory& mem, Gva gva, std::optional<std::uint64_t> value = {});

    // Tracking hooks used by the guest kernel.
    void clear_soft_dirty();
    void resolve_soft_dirty_fault(Gva gva);
    void set_uffd_wp(Gva first, Gva last, bool wp);
    void clear_uffd_wp(Gva gva);
    void clear_guest_logged(Gva gva);
    std::vector<Gva> soft_dirty_pages() const;
    std::vector<Gva> dirty_pages() const;
    void clear_pte_dirty();

    std::vector<Gva> mapped_pages() const;
    std::size_t mapped_count() const { return entries_.size(); }
    bool contains(Gva gva) const { return entries_.contains(gva); }

    /// New mappings start write-protected after a soft-dirty clear.
    bool soft_dirty_armed() const { return soft_dirty_armed_; }

    struct UffdRange {
        Gva first;
        Gva last;
    };
    void add_uffd_range(UffdRange r) { uffd_ranges_.push_back(r); }
    bool in_uffd_range(Gva gva) const;
    const std::vector<UffdRange>& uffd_ranges() const { return uffd_ranges_; }

private:
    struct Entry {
        Gpa gpa;
        PageFlags flags;
    };

    void link(Gva gva, Gpa gpa);
    void unlink(Gva gva, Gpa gpa);
    PageFlags fresh_flags(Gva gva) const;

    Pid pid_;
    std::unordered_map<Gva, Entry> entries_;
    // Reverse index; each list kept sorted ascending.
    std::unordered_map<Gpa, std::vector<Gva>> by_gpa_;
    bool soft_dirty_armed_ = false;
    std::vector<UffdRange> uffd_ranges_;
};

}  // namespace oohsim
