#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "oohsim/cost_model.hpp"
#include "oohsim/simulation.hpp"
#include "oohsim/types.hpp"
#include "oohsim/workload.hpp"

namespace oohsim {

class NoBaseline : public SimError {
public:
    using SimError::SimError;
};

class BrokenChain : public SimError {
public:
    using SimError::SimError;
};

enum class CheckpointMode { Full, Incremental };

std::string_view to_string(CheckpointMode m);

/// Page contents by GVA. Payloads are empty when the run keeps none.
using MemorySnapshot = std::map<Gva, std::vector<std::uint8_t>>;

struct CheckpointImage {
    std::uint64_t sequence_no = 0;
    CheckpointMode mode = CheckpointMode::Full;
    MemorySnapshot pages;
    std::optional<std::uint64_t> parent;
    // Pages mapped at dump time; restore drops everything else.
    std::vector<Gva> mapped;
};

/// Current contents of every page Tracked maps.
MemorySnapshot snapshot_memory(Simulation& sim);

/// Incremental checkpointer plugged into a Simulation as its exploitation
/// phase. Takes a full baseline when Tracked starts and an incremental image
/// holding exactly the reported dirty pages at every Checkpoint op.
class Checkpointer {
public:
    /// Installs the start and exploit hooks on `sim`.
    /// With `baseline` false the first checkpoint throws NoBaseline.
    explicit Checkpointer(Simulation& sim, bool baseline = true);

    const std::vector<CheckpointImage>& chain() const { return chain_; }
    /// Memory snapshot taken at the most recent checkpoint instant.
    const MemorySnapshot& oracle() const { return oracle_; }
    /// Collection plus dump time of every incremental checkpoint, in ms.
    const std::vector<double>& checkpoint_ms() const { return checkpoint_ms_; }

private:
    CheckpointImage dump(Simulation& sim, CheckpointMode mode, const std::set<Gva>* dirty);
    Micros on_checkpoint(Simulation& sim, const IntervalResult& iv);

    std::vector<CheckpointImage> chain_;
    MemorySnapshot oracle_;
    std::vector<double> checkpoint_ms_;
};

struct RestoreResult {
    std::set<Gva> divergent;
    bool consistent() const { return divergent.empty(); }
};

/// Replays a full + incremental chain and compares the result to `oracle`.
/// Throws BrokenChain when the chain does not start with a full image or a
/// parent link is wrong.
RestoreResult restore_verify(const std::vector<CheckpointImage>& chain,
                             const MemorySnapshot& oracle);

/// Memory state a chain restores to.
MemorySnapshot restore(const std::vector<CheckpointImage>& chain);

/// On-disk layout, one directory per image:
///   img-<seq>/manifest.json   sequence_no, mode, parent, pages, mapped, hash
///   img-<seq>/pages/<gva hex>.page
/// Throws IoError on filesystem failure.
void save_chain(const std::vector<CheckpointImage>& chain, const std::filesystem::path& dir);
std::vector<CheckpointImage> load_chain(const std::filesystem::path& dir);

/// FNV-1a over the page list and payloads.
std::uint64_t image_hash(const CheckpointImage& img);

struct MissedPoint {
    std::uint64_t working_set_bytes = 0;
    std::uint64_t dirty = 0;
    std::uint64_t missed = 0;
    double proportion = 0;
};

/// Share of the dirty working set lost by the tracker under relocation
/// churn, per working-set size.
std::vector<MissedPoint> missed_pages_experiment(const CostTable& costs,
                                                 const std::vector<std::uint64_t>& sizes,
                                                 const ChurnSpec& churn = {},
                                                 Technique technique = Technique::Spml);

/// Tracked time of one checkpoint of the micro-benchmark after one write
/// pass, in ms.
double microbench_checkpoint_ms(const CostTable& costs, Technique technique,
                                std::uint64_t bytes);

}  // namespace oohsim
