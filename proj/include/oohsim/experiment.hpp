#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "oohsim/cost_model.hpp"
#include "oohsim/migration.hpp"
#include "oohsim/simulation.hpp"

namespace oohsim {

/// Invalid experiment configuration; `field` names the offending key path.
class ConfigError : public SimError {
public:
    ConfigError(std::string field, const std::string& msg)
        : SimError(field + ": " + msg), field_(std::move(field))
    {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

enum class WorkloadKind { Microbench, Kv, Churn };

struct WorkloadConfig {
    WorkloadKind kind = WorkloadKind::Microbench;
    std::uint32_t rounds = 1;
    // Key-value workload; footprint comes from memory_sizes unless an engine is named.
    std::string engine;
    double write_skew = 0.99;
    double churn_rate = 0;
    std::uint64_t requests = 100000;
    Micros request_us = 2.0;
    // Churn workload.
    double relocations_per_s = 3740.0;
    Micros churn_interval_us = 100000.0;
    // Append a checkpoint (collection + dump) at the end of the stream.
    bool checkpoint = false;
};

enum class ReportFormat { Csv, Json, Plotdata };

/// "csv", "json" or "plotdata". Throws ConfigError naming `where`.
ReportFormat report_format_from_string(const std::string& s, const std::string& where = "format");

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::size_t vcpus = 2;
    std::vector<std::uint64_t> memory_sizes;
    std::vector<Technique> techniques;
    WorkloadConfig workload;
    SchedulerConfig scheduler;
    std::size_t ring_capacity = 16384;
    Micros collection_interval = 1000.0;
    Micros horizon = 60e6;
    std::optional<std::filesystem::path> calibration;
    std::optional<std::filesystem::path> output_dir;
    std::vector<ReportFormat> formats{ReportFormat::Csv};
    bool migration = false;

    /// Parses and validates; unknown keys are rejected. Throws ConfigError.
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);
    void validate() const;
};

struct ReportRow {
    Technique technique = Technique::Proc;
    std::uint64_t memory_bytes = 0;
    Micros ideal_us = 0;
    Micros tracked_us = 0;
    Micros tracker_us = 0;
    double overhead_tracked_pct = 0;
    double overhead_tracker_pct = 0;
    Micros init_us = 0;
    Micros collect_us = 0;
    Micros suspension_us = 0;
    std::uint64_t n_sched_events = 0;
    std::uint64_t vmexits = 0;
    std::uint64_t missed = 0;
    std::uint64_t dropped = 0;
    double checkpoint_ms = 0;
};

struct RunReport {
    std::vector<ReportRow> rows;
    std::vector<TrackerPhaseReport> phases;
    std::vector<CostLedger> ledgers;
    std::optional<CoexistenceResult> migration;
};

ReportRow make_row(const RunResult& r, double checkpoint_ms = 0);

/// Runs every (technique, size) point, techniques outermost.
RunReport run_experiment(const ExperimentConfig& cfg, const CostTable& costs);

/// One simulation of one point of the configuration.
RunResult run_point(const ExperimentConfig& cfg, const CostTable& costs, Technique technique,
                    std::uint64_t bytes, double* checkpoint_ms = nullptr);

std::string format_csv(const RunReport& report);
std::string format_json(const RunReport& report);
/// Reads back the rows (and migration summary) written by format_json.
/// Throws ConfigError on a malformed document.
RunReport parse_report_json(const std::string& text);

/// Blocks of "x y" lines (memory bytes, Tracked overhead) per technique.
std::string format_plotdata(const RunReport& report);

/// Writes report.csv / report.json / plotdata.txt into `dir`. Throws IoError.
std::vector<std::filesystem::path> emit_reports(const RunReport& report,
                                                const std::vector<ReportFormat>& formats,
                                                const std::filesystem::path& dir);

/// Writes `content` to `path`, creating parent directories. Throws IoError.
void write_text(const std::filesystem::path& path, const std::string& content);

/// Fixed-point text with `digits` decimals; identical across runs.
std::string fixed(double v, int digits = 3);

}  // namespace oohsim
