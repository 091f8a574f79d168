#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <unordered_map>
#include <utility>
#include <vector>

#include "oohsim/address_space.hpp"
#include "oohsim/cost_model.hpp"
#include "oohsim/guest_kernel.hpp"
#include "oohsim/types.hpp"

namespace oohsim {

class WrongTechnique : public SimError {
public:
    using SimError::SimError;
};

struct TrackerConfig {
    Technique technique = Technique::Proc;
    // Periodic ring drain for the PML techniques.
    Micros collection_interval = 1000.0;
    Pid target_pid = 1;
    // userfaultfd registration; the whole address space when empty.
    std::optional<GuestPageTable::UffdRange> monitored_range;
    // SPML: charge the page-table walk on every drain instead of once per collection.
    bool walk_per_drain = false;

    /// Throws SimError on an invalid combination.
    void validate() const;

    static TrackerConfig of(Technique t)
    {
        TrackerConfig c;
        c.technique = t;
        return c;
    }
};

/// Result of one collection phase.
struct IntervalResult {
    Micros at = 0;
    std::set<Gva> dirty;
    std::set<Gva> missed;
    // (GVA the Tracker was told, GVA that was actually written)
    std::vector<std::pair<Gva, Gva>> inaccurate;
    std::uint64_t dropped = 0;
    Micros collect_us = 0;
    // SPML collection breakdown by metric.
    Micros reverse_map_us = 0;
    Micros walk_us = 0;
    Micros copy_us = 0;
    Micros other_us = 0;
};

struct TrackerPhaseReport {
    Technique technique = Technique::Proc;
    Micros init_time = 0;
    Micros monitor_span = 0;
    Micros collect_time = 0;
    Micros exploit_time = 0;
    Micros tracked_suspension_total = 0;
    std::set<Gva> dirty_set;
    std::set<Gva> missed;
    std::vector<std::pair<Gva, Gva>> inaccurate;
    std::uint64_t dropped = 0;
    std::vector<IntervalResult> intervals;
};

struct BottleneckBreakdown {
    double reverse_mapping_frac = 0;
    double walk_frac = 0;
    double copy_frac = 0;
    double other_frac = 0;
};

/// Collection-time fractions of an SPML run. Throws WrongTechnique otherwise.
BottleneckBreakdown spml_bottleneck_breakdown(const TrackerPhaseReport& report);
BottleneckBreakdown spml_bottleneck_breakdown(const IntervalResult& interval);

/// Cost of a tracker action: stall imposed on Tracked and Tracker work.
struct PhaseCost {
    Micros tracked = 0;
    Micros tracker = 0;
    PhaseCost& operator+=(const PhaseCost& o)
    {
        tracked += o.tracked;
        tracker += o.tracker;
        return *this;
    }
};

/// A Tracker process using one technique against one Tracked process.
class Tracker {
public:
    Tracker(TrackerConfig cfg, GuestKernel& kernel, const CostTable& costs, CostLedger& ledger);

    Technique technique() const { return cfg_.technique; }
    const TrackerConfig& config() const { return cfg_; }

    /// Initialization phase. Proc and userfaultfd suspend Tracked for the
    /// returned `tracked` time; the PML techniques do not.
    PhaseCost initialize();

    /// Write fault on a protected page (soft-dirty or userfaultfd).
    PhaseCost handle_fault(FaultReason reason, Gva gva);

    /// Periodic ring drain (PML techniques). Returns Tracker work.
    Micros drain();

    /// Drain the ring and resolve entries to GVAs immediately.
    std::vector<Gva> drain_ring();

    /// Collection phase; Tracked is frozen for the returned `tracked` time.
    /// With `rearm` the technique is re-armed for the next interval.
    std::pair<IntervalResult, PhaseCost> collect(Micros now, bool rearm);

    /// Stop tracking. Tracker-only cost.
    PhaseCost teardown();

    /// GPA -> GVA at the time of the last write; used to attribute SPML
    /// entries whose GPA no longer maps anywhere.
    void set_provenance(const std::unordered_map<Gpa, Gva>* writer) { writer_ = writer; }

    TrackerPhaseReport& report() { return report_; }
    const TrackerPhaseReport& report() const { return report_; }

private:
    Micros per_page(Metric m) const;
    void charge(Entity e, Charge c, Micros us) { ledger_->charge(e, c, us); }
    std::vector<Gva> resolve_staged(IntervalResult* into);

    TrackerConfig cfg_;
    GuestKernel* kernel_;
    const CostTable* costs_;
    CostLedger* ledger_;
    const std::unordered_map<Gpa, Gva>* writer_ = nullptr;
    TrackerPhaseReport report_;
    bool initialized_ = false;

    // userfaultfd: pages faulted in the current interval.
    std::set<Gva> faulted_;
    // SPML: raw GPAs drained from the ring, not yet reverse mapped.
    std::vector<Gpa> staged_;
    // EPML: GVAs drained in the current interval.
    std::set<Gva> logged_;
    std::uint64_t dropped_seen_ = 0;
    Micros interval_copy_us_ = 0;
    Micros interval_walk_us_ = 0;
};

}  // namespace oohsim
