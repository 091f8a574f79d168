#include "oohsim/repro.hpp"

#include <cmath>
#include <sstream>

#include "oohsim/checkpoint.hpp"
#include "oohsim/experiment.hpp"
#include "oohsim/hypervisor.hpp"
#include "oohsim/migration.hpp"
#include "oohsim/reference_data.hpp"
#include "oohsim/trackers.hpp"

namespace oohsim {

std::vector<ReferenceValue> parse_reference(const std::string& text)
{
    std::vector<ReferenceValue> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream ls(line);
        ReferenceValue v;
        if (!(ls >> v.figure)) {
            continue;
        }
        std::string extra;
        if (!(ls >> v.series >> v.x >> v.value) || (ls >> extra)) {
            throw SimError("reference data line " + std::to_string(lineno) +
                           ": expected <figure> <series> <x> <value>");
        }
        out.push_back(v);
    }
    return out;
}

const std::vector<ReferenceValue>& reference_values()
{
    static const std::vector<ReferenceValue> values = parse_reference(kReferenceData);
    return values;
}

std::optional<double> reference_value(const std::string& figure, const std::string& series,
                                      const std::string& x)
{
    for (const auto& v : reference_values()) {
        if (v.figure == figure && v.series == series && v.x == x) {
            return v.value;
        }
    }
    return std::nullopt;
}

std::optional<double> ReproRow::rel_error() const
{
    if (!reference || *reference == 0) {
        return std::nullopt;
    }
    return (simulated - *reference) / *reference;
}

const std::vector<std::string>& repro_figures()
{
    static const std::vector<std::string> ids = {"table1", "table5", "fig6",
                                                 "fig8",   "fig9",   "coexist"};
    return ids;
}

namespace {

std::string short_name(Technique t)
{
    return t == Technique::Userfaultfd ? "uffd" : std::string(to_string(t));
}

void add(std::vector<ReproRow>& rows, const std::string& figure, const std::string& series,
         const std::string& x, double simulated)
{
    rows.push_back(ReproRow{figure, series, x, reference_value(figure, series, x), simulated});
}

ExperimentConfig microbench_config(Technique t)
{
    ExperimentConfig c;
    c.techniques = {t};
    c.memory_sizes = table_sizes();
    return c;
}

std::vector<ReproRow> repro_table1(const CostTable& costs)
{
    std::vector<ReproRow> rows;
    for (const Technique t : {Technique::Userfaultfd, Technique::Proc, Technique::Spml,
                              Technique::Epml}) {
        for (const std::uint64_t bytes : table_sizes()) {
            const ReportRow r = make_row(run_point(microbench_config(t), costs, t, bytes));
            const std::string x = format_size(bytes);
            add(rows, "table1", "tracked:" + short_name(t), x, r.overhead_tracked_pct);
            add(rows, "table1", "tracker:" + short_name(t), x, r.overhead_tracker_pct);
        }
    }
    return rows;
}

std::vector<ReproRow> repro_table5(const CostTable& costs)
{
    std::vector<ReproRow> rows;
    for (const Technique t : {Technique::Proc, Technique::Spml, Technique::Epml}) {
        for (const std::uint64_t bytes : table_sizes()) {
            add(rows, "table5", short_name(t), format_size(bytes),
                microbench_checkpoint_ms(costs, t, bytes));
        }
    }
    return rows;
}

std::vector<ReproRow> repro_fig6(const CostTable& costs)
{
    std::vector<ReproRow> rows;
    double sum = 0;
    for (const std::uint64_t bytes : table_sizes()) {
        ExperimentConfig c = microbench_config(Technique::Spml);
        const RunResult r = run_point(c, costs, Technique::Spml, bytes);
        const BottleneckBreakdown b = spml_bottleneck_breakdown(*r.report);
        const std::string x = format_size(bytes);
        add(rows, "fig6", "reverse_mapping", x, b.reverse_mapping_frac);
        add(rows, "fig6", "walk", x, b.walk_frac);
        add(rows, "fig6", "copy", x, b.copy_frac);
        add(rows, "fig6", "other", x, b.other_frac);
        sum += b.reverse_mapping_frac;
    }
    add(rows, "fig6", "reverse_mapping", "average", sum / static_cast<double>(table_sizes().size()));
    return rows;
}

std::vector<ReproRow> repro_fig8(const CostTable& costs)
{
    std::vector<ReproRow> rows;
    for (const std::string engine : {"baby", "cache", "stdhash", "stdtree", "tiny"}) {
        for (const Technique t : {Technique::Proc, Technique::Spml, Technique::Epml}) {
            ExperimentConfig c;
            c.techniques = {t};
            c.workload.kind = WorkloadKind::Kv;
            c.workload.engine = engine;
            c.workload.checkpoint = true;
            // Request time fitted so SPML on tiny lands on its published overhead.
            c.workload.request_us = 6.75;
            c.workload.requests = engine == "stdtree" ? 100'000'000 : 10'000'000;
            c.horizon = 1e12;
            const RunReport rep = run_experiment(c, costs);
            add(rows, "fig8", short_name(t), engine, rep.rows.front().overhead_tracked_pct);
        }
    }
    return rows;
}

std::vector<ReproRow> repro_fig9(const CostTable& costs)
{
    std::vector<ReproRow> rows;
    const std::vector<std::uint64_t> sizes = {1'000'000, 2'000'000, 5'000'000,
                                              10'000'000, 25'000'000, 50'000'000};
    for (const Technique t : {Technique::Spml, Technique::Epml}) {
        for (const auto& p : missed_pages_experiment(costs, sizes, {}, t)) {
            add(rows, "fig9", short_name(t), format_size(p.working_set_bytes),
                100.0 * p.proportion);
        }
    }
    return rows;
}

std::vector<ReproRow> repro_coexist(const CostTable& costs)
{
    std::vector<ReproRow> rows;
    const MigrationJob job;
    const CoexistenceResult r = coexistence_experiment(costs, job);
    const std::string x = format_size(job.vm_bytes);
    add(rows, "coexist", "inflation", x, r.inflation_pct);
    add(rows, "coexist", "baseline_ms", x, r.baseline.total_us / 1000.0);
    add(rows, "coexist", "concurrent_ms", x, r.concurrent.total_us / 1000.0);
    add(rows, "coexist", "vm1_vmexits_per_s", x, r.vm1_vmexits_per_s);
    const ModelCheckResult mc = model_check_coordination(costs);
    add(rows, "coexist", "model_check_states", "depth12",
        static_cast<double>(mc.states));
    add(rows, "coexist", "model_check_violations", "depth12",
        static_cast<double>(mc.violations.size()));
    return rows;
}

}  // namespace

std::vector<ReproRow> run_repro(const std::string& figure, const CostTable& costs)
{
    if (figure == "table1") return repro_table1(costs);
    if (figure == "table5") return repro_table5(costs);
    if (figure == "fig6") return repro_fig6(costs);
    if (figure == "fig8") return repro_fig8(costs);
    if (figure == "fig9") return repro_fig9(costs);
    if (figure == "coexist") return repro_coexist(costs);
    std::string known;
    for (const auto& f : repro_figures()) {
        known += (known.empty() ? "" : ", ") + f;
    }
    throw UnknownFigure("unknown figure '" + figure + "' (known: " + known + ")");
}

std::string format_repro_csv(const std::vector<ReproRow>& rows)
{
    std::string out = "figure,series,x,reference,simulated,rel_error\n";
    for (const auto& r : rows) {
        const auto err = r.rel_error();
        out += r.figure + "," + r.series + "," + r.x + "," + (r.reference ? fixed(*r.reference) : "") +
               "," + fixed(r.simulated, 4) + "," + (err ? fixed(*err, 4) : "") + "\n";
    }
    return out;
}

}  // namespace oohsim
