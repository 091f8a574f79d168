#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oohsim/types.hpp"

namespace oohsim {

/// Internal metrics M1..M18 of the cost catalog.
enum class Metric : std::uint8_t {
    M1 = 1, M2, M3, M4, M5, M6, M7, M8, M9, M10,
    M11, M12, M13, M14, M15, M16, M17, M18,
};

inline constexpr int kMetricCount = 18;

std::string metric_name(Metric m);
std::optional<Metric> metric_from_string(std::string_view s);
std::string_view metric_description(Metric m);

/// A ledger key: either a catalog metric or one of the simulator's own
/// calibrated cost categories.
enum class Charge : std::uint8_t {
    M1 = 1, M2, M3, M4, M5, M6, M7, M8, M9, M10,
    M11, M12, M13, M14, M15, M16, M17, M18,
    VmExit,          // PML-full vmexit round trip seen by a vCPU
    Dump,            // checkpoint page write-out
    CheckpointFixed, // per-dump fixed cost (process freeze, metadata)
    MigrationSend,   // pre-copy page transfer
    RingWait,        // writer blocked until the Tracker frees ring space
};

inline constexpr int kChargeCount = 23;

constexpr Charge charge_of(Metric m) { return static_cast<Charge>(m); }
std::string charge_name(Charge c);

struct SizeAnchor {
    std::uint64_t bytes = 0;
    double ms = 0.0;
};

/// Scalars that are not part of the published catalog but are needed to turn
/// it into a timing model. All in microseconds unless suffixed otherwise.
struct TimingParams {
    Micros page_write_us = 0.9846;       // Tracked compute per page write
    Micros spml_vmexit_us = 1500.0;      // guest-visible SPML PML-full round trip
    Micros hv_vmexit_us = 600.0;         // hypervisor CPU per PML-full drain
    Micros dump_us_per_page = 3.73;      // checkpoint write-out per page
    Micros checkpoint_fixed_us = 100000.0;
    Micros migration_send_us_per_page = 10.0;
};

/// Calibrated costs of M1..M18 plus the timing scalars. Immutable after load.
class CostTable {
public:
    /// Published catalog values.
    static CostTable defaults();

    /// Defaults overlaid with a calibration file.
    static CostTable load(const std::filesystem::path& path);

    /// Overlay `key = value` lines onto this table. Throws CalibrationError.
    void apply(std::istream& in, std::string_view origin = "<stream>");
    void set(std::string_view key, double value);

    bool is_sized(Metric m) const;

    /// Cost in µs of `m` for a Tracked memory of `memory_bytes`.
    Micros cost_of(Metric m, std::uint64_t memory_bytes) const;

    /// cost_of() spread evenly over the pages of `memory_bytes`.
    Micros per_page(Metric m, std::uint64_t memory_bytes) const;

    const std::vector<SizeAnchor>& anchors(Metric m) const;
    Micros fixed(Metric m) const;

    const TimingParams& timing() const { return timing_; }
    TimingParams& timing() { return timing_; }

    std::size_t page_size() const { return page_size_; }

    /// Serialize every value in calibration-file syntax.
    void write(std::ostream& out) const;

private:
    std::array<std::optional<Micros>, kMetricCount + 1> fixed_{};
    std::array<std::vector<SizeAnchor>, kMetricCount + 1> sized_{};
    TimingParams timing_{};
    std::size_t page_size_ = kDefaultPageSize;
};

class CalibrationError : public SimError {
public:
    using SimError::SimError;
};

class UnknownMetric : public SimError {
public:
    using SimError::SimError;
};

/// Parse "1MB", "250MB", "1GB", "4096" (decimal units, as in the tables).
std::uint64_t parse_size(std::string_view s);
std::string format_size(std::uint64_t bytes);

/// The seven memory sizes the tables are reported at.
const std::vector<std::uint64_t>& table_sizes();

enum class Entity : std::uint8_t { Tracked, Tracker, Hypervisor };
inline constexpr int kEntityCount = 3;

struct LedgerCounts {
    std::uint64_t sched_events = 0;  // N in the EPML estimator
    std::uint64_t vmexits = 0;
    std::uint64_t faults = 0;
    std::uint64_t drains = 0;
    std::uint64_t dropped = 0;
    std::uint64_t hypercalls = 0;
    std::uint64_t vmreads = 0;
    std::uint64_t vmwrites = 0;
    std::uint64_t self_ipis = 0;
    std::uint64_t events = 0;
};

/// Accumulated µs per entity and charge, plus event counters.
class CostLedger {
public:
    void charge(Entity e, Charge c, Micros us);
    Micros get(Entity e, Charge c) const;
    Micros total(Entity e) const;

    LedgerCounts& counts() { return counts_; }
    const LedgerCounts& counts() const { return counts_; }

private:
    std::array<std::array<Micros, kChargeCount + 1>, kEntityCount> us_{};
    LedgerCounts counts_{};
};

/// Analytical EPML estimate: p_epml = p_vanilla + N*(3*c_vmwrite + c_vmread) + c_copyrb.
struct EpmlEstimate {
    Micros p_vanilla = 0;
    std::uint64_t n_events = 0;
    Micros c_vmread = 0;
    Micros c_vmwrite = 0;
    Micros c_copyrb = 0;
    Micros p_epml = 0;
};

EpmlEstimate estimate_epml(Micros p_vanilla, std::uint64_t n, const CostTable& table,
                           std::uint64_t memory_bytes);

/// 100 * (tracked / ideal - 1). Throws SimError if ideal <= 0.
double overhead_pct(Micros tracked, Micros ideal);

}  // namespace oohsim
