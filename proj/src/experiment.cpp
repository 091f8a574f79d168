#include "oohsim/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "oohsim/checkpoint.hpp"

namespace oohsim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Reads the keys of one JSON object and rejects the ones nobody asked for.
class Fields {
public:
    Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path))
    {
        if (!obj_.is_object()) {
            throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
        }
    }

    std::string key_path(const std::string& key) const
    {
        return path_.empty() ? key : path_ + "." + key;
    }

    const json* find(const std::string& key)
    {
        known_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    template <typename T>
    void get(const std::string& key, T& dst)
    {
        const json* v = find(key);
        if (v == nullptr) {
            return;
        }
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v->is_boolean()) {
                    throw ConfigError(key_path(key), "expected true or false");
                }
            } else if constexpr (std::is_unsigned_v<T>) {
                if (!v->is_number_unsigned()) {
                    throw ConfigError(key_path(key), "expected a non-negative integer");
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v->is_number()) {
                    throw ConfigError(key_path(key), "expected a number");
                }
            }
            dst = v->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(key_path(key), e.what());
        }
    }

    void finish() const
    {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!known_.contains(it.key())) {
                throw ConfigError(key_path(it.key()), "unknown key");
            }
        }
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> known_;
};

std::uint64_t size_value(const json& v, const std::string& where)
{
    if (v.is_number_unsigned()) {
        return v.get<std::uint64_t>();
    }
    if (v.is_string()) {
        try {
            return parse_size(v.get<std::string>());
        } catch (const SimError& e) {
            throw ConfigError(where, e.what());
        }
    }
    throw ConfigError(where, "expected a size such as \"50MB\" or a byte count");
}

WorkloadKind workload_kind(const std::string& s, const std::string& where)
{
    if (s == "microbench") return WorkloadKind::Microbench;
    if (s == "kv") return WorkloadKind::Kv;
    if (s == "churn") return WorkloadKind::Churn;
    throw ConfigError(where, "unknown workload kind '" + s + "' (microbench, kv, churn)");
}

double rounded(double v) { return std::stod(fixed(v)); }

}  // namespace

ReportFormat report_format_from_string(const std::string& s, const std::string& where)
{
    if (s == "csv") return ReportFormat::Csv;
    if (s == "json") return ReportFormat::Json;
    if (s == "plotdata") return ReportFormat::Plotdata;
    throw ConfigError(where, "unknown format '" + s + "' (csv, json, plotdata)");
}

std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s = buf;
    if (s == "-0" || s.rfind("-0.", 0) == 0) {
        if (s.find_first_not_of("-0.") == std::string::npos) {
            s.erase(0, 1);
        }
    }
    return s;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text)
{
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
    }
    ExperimentConfig c;
    Fields f(root, "");
    f.get("seed", c.seed);
    f.get("vcpus", c.vcpus);
    if (const json* sizes = f.find("memory_sizes")) {
        if (!sizes->is_array()) {
            throw ConfigError("memory_sizes", "expected a list");
        }
        for (std::size_t i = 0; i < sizes->size(); ++i) {
            c.memory_sizes.push_back(
                size_value((*sizes)[i], "memory_sizes[" + std::to_string(i) + "]"));
        }
    }
    if (const json* techs = f.find("techniques")) {
        if (!techs->is_array()) {
            throw ConfigError("techniques", "expected a list");
        }
        for (std::size_t i = 0; i < techs->size(); ++i) {
            const std::string where = "techniques[" + std::to_string(i) + "]";
            if (!(*techs)[i].is_string()) {
                throw ConfigError(where, "expected a technique name");
            }
            try {
                c.techniques.push_back(technique_from_string((*techs)[i].get<std::string>()));
            } catch (const SimError& e) {
                throw ConfigError(where, e.what());
            }
        }
    }
    if (const json* w = f.find("workload")) {
        Fields wf(*w, "workload");
        std::string kind = "microbench";
        wf.get("kind", kind);
        c.workload.kind = workload_kind(kind, "workload.kind");
        wf.get("rounds", c.workload.rounds);
        wf.get("engine", c.workload.engine);
        wf.get("write_skew", c.workload.write_skew);
        wf.get("churn_rate", c.workload.churn_rate);
        wf.get("requests", c.workload.requests);
        wf.get("request_us", c.workload.request_us);
        wf.get("relocations_per_s", c.workload.relocations_per_s);
        wf.get("churn_interval_us", c.workload.churn_interval_us);
        wf.get("checkpoint", c.workload.checkpoint);
        wf.finish();
    }
    if (const json* s = f.find("scheduler")) {
        Fields sf(*s, "scheduler");
        sf.get("quantum_us", c.scheduler.quantum);
        sf.get("competitors", c.scheduler.competitors);
        sf.finish();
    }
    f.get("ring_capacity", c.ring_capacity);
    f.get("collection_interval_us", c.collection_interval);
    f.get("horizon_us", c.horizon);
    if (const json* p = f.find("calibration")) {
        if (!p->is_string()) {
            throw ConfigError("calibration", "expected a path");
        }
        c.calibration = p->get<std::string>();
    }
    if (const json* o = f.find("output")) {
        Fields of(*o, "output");
        if (const json* d = of.find("dir")) {
            if (!d->is_string()) {
                throw ConfigError("output.dir", "expected a path");
            }
            c.output_dir = d->get<std::string>();
        }
        if (const json* fm = of.find("formats")) {
            if (!fm->is_array()) {
                throw ConfigError("output.formats", "expected a list");
            }
            c.formats.clear();
            for (std::size_t i = 0; i < fm->size(); ++i) {
                const std::string where = "output.formats[" + std::to_string(i) + "]";
                if (!(*fm)[i].is_string()) {
                    throw ConfigError(where, "expected a format name");
                }
                c.formats.push_back(report_format_from_string((*fm)[i].get<std::string>(), where));
            }
        }
        of.finish();
    }
    f.get("migration", c.migration);
    f.finish();
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("<file>", "cannot read " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

void ExperimentConfig::validate() const
{
    if (techniques.empty()) {
        throw ConfigError("techniques", "at least one technique is required");
    }
    const bool engine = workload.kind == WorkloadKind::Kv && !workload.engine.empty();
    if (memory_sizes.empty() && !engine) {
        throw ConfigError("memory_sizes", "at least one size is required");
    }
    if (engine) {
        try {
            kv_engine_footprint(workload.engine);
        } catch (const SimError& e) {
            throw ConfigError("workload.engine", e.what());
        }
    }
    for (std::size_t i = 0; i < memory_sizes.size(); ++i) {
        if (memory_sizes[i] == 0) {
            throw ConfigError("memory_sizes[" + std::to_string(i) + "]", "must be > 0");
        }
    }
    if (vcpus == 0) {
        throw ConfigError("vcpus", "must be >= 1");
    }
    if (workload.rounds == 0) {
        throw ConfigError("workload.rounds", "must be >= 1");
    }
    if (workload.write_skew < 0) {
        throw ConfigError("workload.write_skew", "must be >= 0");
    }
    if (workload.churn_rate < 0 || workload.relocations_per_s < 0) {
        throw ConfigError("workload.churn_rate", "must be >= 0");
    }
    if (!(scheduler.quantum > 0)) {
        throw ConfigError("scheduler.quantum_us", "must be > 0");
    }
    if (ring_capacity < 3) {
        throw ConfigError("ring_capacity", "must hold at least one block");
    }
    if (!(collection_interval > 0)) {
        throw ConfigError("collection_interval_us", "must be > 0");
    }
    if (horizon < 0) {
        throw ConfigError("horizon_us", "must be >= 0");
    }
    if (formats.empty()) {
        throw ConfigError("output.formats", "at least one format is required");
    }
}

ReportRow make_row(const RunResult& r, double checkpoint_ms)
{
    ReportRow row;
    row.technique = r.technique.value_or(Technique::Proc);
    row.memory_bytes = r.memory_bytes;
    row.ideal_us = r.ideal_us;
    row.tracked_us = r.tracked_us;
    row.tracker_us = r.tracker_us;
    if (r.ideal_us > 0) {
        row.overhead_tracked_pct = overhead_pct(r.tracked_us, r.ideal_us);
        // Tracker's ideal time is Tracked's ideal time.
        row.overhead_tracker_pct = overhead_pct(r.tracker_us, r.ideal_us);
    }
    row.init_us = r.init_us;
    row.collect_us = r.collect_us;
    row.suspension_us = r.suspension_us;
    row.n_sched_events = r.scheduler_events;
    row.vmexits = r.ledger.counts().vmexits;
    if (r.report) {
        row.missed = r.report->missed.size();
        row.dropped = r.report->dropped;
    }
    row.checkpoint_ms = checkpoint_ms;
    return row;
}

RunResult run_point(const ExperimentConfig& cfg, const CostTable& costs, Technique technique,
                    std::uint64_t bytes, double* checkpoint_ms)
{
    const std::size_t ps = costs.page_size();
    const auto& wc = cfg.workload;
    Workload w;
    switch (wc.kind) {
    case WorkloadKind::Microbench:
        w = make_microbench(MicroBenchSpec{pages_for(bytes, ps), wc.rounds}, ps);
        break;
    case WorkloadKind::Kv: {
        KvWorkloadSpec k;
        k.engine = wc.engine.empty() ? "custom" : wc.engine;
        k.footprint = bytes;
        k.write_skew = wc.write_skew;
        k.churn_rate = wc.churn_rate;
        k.requests = wc.requests;
        k.request_us = wc.request_us;
        k.write_us = costs.timing().page_write_us;
        k.seed = cfg.seed;
        w = make_kv_workload(k, ps);
        break;
    }
    case WorkloadKind::Churn: {
        ChurnSpec c;
        c.working_set_pages = pages_for(bytes, ps);
        c.rate = wc.relocations_per_s;
        c.interval = wc.churn_interval_us;
        c.seed = cfg.seed;
        w = make_churn_workload(c, ps);
        break;
    }
    }
    if (wc.checkpoint) {
        w.ops.push_back(Op{OpKind::Checkpoint, Gva{0}, 0, 0});
    }
    SimulationConfig sc;
    TrackerConfig tc = TrackerConfig::of(technique);
    tc.collection_interval = cfg.collection_interval;
    sc.tracker = tc;
    sc.scheduler = cfg.scheduler;
    sc.ring_capacity = cfg.ring_capacity;
    sc.vcpus = cfg.vcpus;
    sc.horizon = cfg.horizon;
    Simulation sim(costs, sc, std::move(w));
    std::optional<Checkpointer> cp;
    if (wc.checkpoint) {
        cp.emplace(sim);
    }
    RunResult r = sim.run();
    if (checkpoint_ms != nullptr) {
        *checkpoint_ms = cp && !cp->checkpoint_ms().empty() ? cp->checkpoint_ms().back() : 0;
    }
    return r;
}

RunReport run_experiment(const ExperimentConfig& cfg, const CostTable& costs)
{
    cfg.validate();
    RunReport rep;
    if (cfg.horizon == 0) {
        return rep;
    }
    std::vector<std::uint64_t> sizes = cfg.memory_sizes;
    if (sizes.empty()) {
        sizes.push_back(kv_engine_footprint(cfg.workload.engine));
    }
    for (const Technique t : cfg.techniques) {
        for (const std::uint64_t bytes : sizes) {
            double cp_ms = 0;
            RunResult r = run_point(cfg, costs, t, bytes, &cp_ms);
            rep.rows.push_back(make_row(r, cp_ms));
            if (r.report) {
                rep.phases.push_back(std::move(*r.report));
            }
            rep.ledgers.push_back(std::move(r.ledger));
        }
    }
    if (cfg.migration) {
        rep.migration = coexistence_experiment(costs);
    }
    return rep;
}

std::string format_csv(const RunReport& report)
{
    std::string out =
        "technique,memory_bytes,ideal_us,tracked_us,tracker_us,overhead_tracked_pct,"
        "overhead_tracker_pct,init_us,collect_us,suspension_us,n_sched_events,vmexits,"
        "missed,dropped,checkpoint_ms\n";
    for (const auto& r : report.rows) {
        out += std::string(to_string(r.technique)) + "," + std::to_string(r.memory_bytes) + "," +
               fixed(r.ideal_us) + "," + fixed(r.tracked_us) + "," + fixed(r.tracker_us) + "," +
               fixed(r.overhead_tracked_pct) + "," + fixed(r.overhead_tracker_pct) + "," +
               fixed(r.init_us) + "," + fixed(r.collect_us) + "," + fixed(r.suspension_us) +
               "," + std::to_string(r.n_sched_events) + "," + std::to_string(r.vmexits) + "," +
               std::to_string(r.missed) + "," + std::to_string(r.dropped) + "," +
               fixed(r.checkpoint_ms) + "\n";
    }
    return out;
}

std::string format_json(const RunReport& report)
{
    json rows = json::array();
    for (const auto& r : report.rows) {
        rows.push_back({
            {"technique", to_string(r.technique)},
            {"memory_bytes", r.memory_bytes},
            {"ideal_us", rounded(r.ideal_us)},
            {"tracked_us", rounded(r.tracked_us)},
            {"tracker_us", rounded(r.tracker_us)},
            {"overhead_tracked_pct", rounded(r.overhead_tracked_pct)},
            {"overhead_tracker_pct", rounded(r.overhead_tracker_pct)},
            {"init_us", rounded(r.init_us)},
            {"collect_us", rounded(r.collect_us)},
            {"suspension_us", rounded(r.suspension_us)},
            {"n_sched_events", r.n_sched_events},
            {"vmexits", r.vmexits},
            {"missed", r.missed},
            {"dropped", r.dropped},
            {"checkpoint_ms", rounded(r.checkpoint_ms)},
        });
    }
    json root = {{"rows", rows}};
    if (report.migration) {
        const auto& m = *report.migration;
        root["migration"] = {
            {"vm1_vmexits_per_s", rounded(m.vm1_vmexits_per_s)},
            {"baseline_us", rounded(m.baseline.total_us)},
            {"concurrent_us", rounded(m.concurrent.total_us)},
            {"baseline_rounds", m.baseline.rounds.size()},
            {"concurrent_rounds", m.concurrent.rounds.size()},
            {"inflation_pct", rounded(m.inflation_pct)},
        };
    }
    return root.dump(2) + "\n";
}

RunReport parse_report_json(const std::string& text)
{
    RunReport rep;
    try {
        const json root = json::parse(text);
        for (const auto& j : root.at("rows")) {
            ReportRow r;
            r.technique = technique_from_string(j.at("technique").get<std::string>());
            r.memory_bytes = j.at("memory_bytes").get<std::uint64_t>();
            r.ideal_us = j.at("ideal_us").get<double>();
            r.tracked_us = j.at("tracked_us").get<double>();
            r.tracker_us = j.at("tracker_us").get<double>();
            r.overhead_tracked_pct = j.at("overhead_tracked_pct").get<double>();
            r.overhead_tracker_pct = j.at("overhead_tracker_pct").get<double>();
            r.init_us = j.at("init_us").get<double>();
            r.collect_us = j.at("collect_us").get<double>();
            r.suspension_us = j.at("suspension_us").get<double>();
            r.n_sched_events = j.at("n_sched_events").get<std::uint64_t>();
            r.vmexits = j.at("vmexits").get<std::uint64_t>();
            r.missed = j.at("missed").get<std::uint64_t>();
            r.dropped = j.at("dropped").get<std::uint64_t>();
            r.checkpoint_ms = j.at("checkpoint_ms").get<double>();
            rep.rows.push_back(r);
        }
        if (root.contains("migration")) {
            const auto& m = root["migration"];
            CoexistenceResult c;
            c.vm1_vmexits_per_s = m.at("vm1_vmexits_per_s").get<double>();
            c.baseline.total_us = m.at("baseline_us").get<double>();
            c.concurrent.total_us = m.at("concurrent_us").get<double>();
            c.baseline.rounds.resize(m.at("baseline_rounds").get<std::size_t>());
            c.concurrent.rounds.resize(m.at("concurrent_rounds").get<std::size_t>());
            c.inflation_pct = m.at("inflation_pct").get<double>();
            rep.migration = c;
        }
    } catch (const json::exception& e) {
        throw ConfigError("<report>", e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const SimError& e) {
        throw ConfigError("<report>.technique", e.what());
    }
    return rep;
}

std::string format_plotdata(const RunReport& report)
{
    std::string out;
    for (const Technique t : {Technique::Proc, Technique::Userfaultfd, Technique::Spml,
                              Technique::Epml}) {
        std::string block;
        for (const auto& r : report.rows) {
            if (r.technique == t) {
                block += std::to_string(r.memory_bytes) + " " + fixed(r.overhead_tracked_pct) + "\n";
            }
        }
        if (!block.empty()) {
            out += "# " + std::string(to_string(t)) + " memory_bytes overhead_tracked_pct\n" +
                   block + "\n\n";
        }
    }
    return out;
}

void write_text(const fs::path& path, const std::string& content)
{
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
        if (ec) {
            throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
        }
    }
    std::ofstream f(path, std::ios::binary);
    f << content;
    f.close();
    if (!f) {
        throw IoError("cannot write " + path.string());
    }
}

std::vector<fs::path> emit_reports(const RunReport& report, const std::vector<ReportFormat>& formats,
                                   const fs::path& dir)
{
    std::vector<fs::path> written;
    for (const ReportFormat f : formats) {
        fs::path p;
        switch (f) {
        case ReportFormat::Csv:
            p = dir / "report.csv";
            write_text(p, format_csv(report));
            break;
        case ReportFormat::Json:
            p = dir / "report.json";
            write_text(p, format_json(report));
            break;
        case ReportFormat::Plotdata:
            p = dir / "plotdata.txt";
            write_text(p, format_plotdata(report));
            break;
        }
        written.push_back(p);
    }
    return written;
}

}  // namespace oohsim
