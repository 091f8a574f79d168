#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "oohsim/cost_model.hpp"
#include "oohsim/types.hpp"

namespace oohsim {

enum class OpKind : std::uint8_t {
    Write,       // one store to the page
    Unmap,       // munmap of the page
    Relocate,    // kernel moves the page to a new GPA (compaction, NUMA)
    Compute,     // pure CPU time
    Checkpoint,  // Tracker collection + exploitation instant
};

struct Op {
    OpKind kind = OpKind::Write;
    Gva gva;
    std::uint64_t value = 0;
    Micros duration = 0;
};

/// Operation stream of the Tracked process.
struct Workload {
    std::string name;
    std::uint64_t memory_bytes = 0;
    // Pages mapped (and pinned) before tracking starts.
    std::vector<Gva> premapped;
    std::vector<Op> ops;
};

/// Untracked execution time of the whole stream.
Micros ideal_time(const Workload& w, const TimingParams& timing);

struct MicroBenchSpec {
    std::uint64_t num_pages = 0;
    std::uint32_t rounds = 1;
};

/// Whole pages in `bytes` (rounded down).
std::uint64_t pages_for(std::uint64_t bytes, std::size_t page_size);

/// Array of buffers written once per page per round, value = page index.
Workload make_microbench(const MicroBenchSpec& spec, std::size_t page_size = kDefaultPageSize);

struct KvWorkloadSpec {
    std::string engine = "custom";
    std::uint64_t footprint = 0;
    double write_skew = 0.99;
    // Page relocations per second of virtual time.
    double churn_rate = 0;
    std::uint64_t requests = 100000;
    // Request processing time and the store it ends with.
    Micros request_us = 2.0;
    Micros write_us = TimingParams{}.page_write_us;
    std::uint64_t seed = 1;
};

/// Footprint of the named key-value engines (baby, cache, stdhash, stdtree, tiny).
std::uint64_t kv_engine_footprint(const std::string& engine);

/// Zipf-skewed page writes over the footprint with optional churn. Repeat
/// writes to an already dirty page appear as compute time.
Workload make_kv_workload(const KvWorkloadSpec& spec, std::size_t page_size = kDefaultPageSize);

struct ChurnSpec {
    std::uint64_t working_set_pages = 0;
    // Relocations per second and the interval over which they happen.
    double rate = 3740.0;
    Micros interval = 100000.0;
    std::uint64_t seed = 1;
};

/// One write pass over the working set followed by relocation churn.
Workload make_churn_workload(const ChurnSpec& spec, std::size_t page_size = kDefaultPageSize);

struct FuzzSpec {
    std::uint64_t max_pages = 4096;
    bool churn = true;
    std::uint64_t seed = 1;
};

/// Random trace of writes, unmaps, relocations and compute.
Workload make_fuzz_trace(const FuzzSpec& spec, std::size_t page_size = kDefaultPageSize);

/// Ground truth obtained by replaying the op stream without any tracker.
struct ReplayOracle {
    // Pages written since the last checkpoint and still mapped at the end.
    std::set<Gva> dirty;
    // Subset of `dirty` whose backing moved after the last write: a GPA log
    // of that write no longer reverse maps.
    std::set<Gva> relocated_after_write;
    std::set<Gva> mapped;
};

ReplayOracle replay_dirty_set(const Workload& w);

}  // namespace oohsim
