#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oohsim/event_queue.hpp"
#include "oohsim/experiment.hpp"

using namespace oohsim;

namespace {

const CostTable& costs()
{
    static const CostTable c = CostTable::defaults();
    return c;
}

ExperimentConfig small_config()
{
    return ExperimentConfig::from_json(R"({
        "seed": 7,
        "memory_sizes": ["1MB", "10MB"],
        "techniques": ["proc", "uffd", "spml", "epml"],
        "workload": {"kind": "microbench", "rounds": 2}
    })");
}

std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_SUITE("sim-engine")
{
    TEST_CASE("events run in time order and ties in insertion order")
    {
        EventQueue q;
        std::string order;
        q.push(5, EventKind::Write, [&] { order += 'c'; });
        q.push(1, EventKind::Write, [&] { order += 'a'; });
        q.push(5, EventKind::Schedule, [&] { order += 'd'; });
        q.push(2, EventKind::Write, [&] {
            order += 'b';
            q.push(2, EventKind::Softirq, [&] { order += 'B'; });
        });
        while (q.step()) {
        }
        CHECK(order == "abBcd");
        CHECK(q.now() == 5);
        CHECK(q.executed() == 5);
        CHECK(q.executed(EventKind::Write) == 3);
    }

    TEST_CASE("events cannot be scheduled in the past")
    {
        EventQueue q;
        q.push(10, EventKind::Write, [] {});
        q.step();
        CHECK_THROWS_AS(q.push(9, EventKind::Write, [] {}), SimError);
    }

    TEST_CASE("run stops at the given time")
    {
        EventQueue q;
        int n = 0;
        for (int t = 1; t <= 10; ++t) {
            q.push(t, EventKind::Write, [&] { ++n; });
        }
        q.run(4.5);
        CHECK(n == 4);
        CHECK(q.size() == 6);
    }

    TEST_CASE("the same configuration yields byte-identical CSV")
    {
        const ExperimentConfig c = small_config();
        const std::string a = format_csv(run_experiment(c, costs()));
        const std::string b = format_csv(run_experiment(c, costs()));
        CHECK(a == b);
    }

    TEST_CASE("the full sweep yields one row per technique and size")
    {
        ExperimentConfig c;
        c.techniques = {Technique::Proc, Technique::Userfaultfd, Technique::Spml,
                        Technique::Epml};
        c.memory_sizes = table_sizes();
        const RunReport r = run_experiment(c, costs());
        CHECK(r.rows.size() == 28);
        CHECK(r.rows.front().technique == Technique::Proc);
        CHECK(r.rows.back().technique == Technique::Epml);
    }

    TEST_CASE("a zero horizon gives empty reports")
    {
        ExperimentConfig c = small_config();
        c.horizon = 0;
        const RunReport r = run_experiment(c, costs());
        CHECK(r.rows.empty());
        const std::string csv = format_csv(r);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
        CHECK(parse_report_json(format_json(r)).rows.empty());
    }

    TEST_CASE("configuration errors name the offending field")
    {
        auto field_of = [](const std::string& text) {
            try {
                ExperimentConfig::from_json(text);
            } catch (const ConfigError& e) {
                return e.field();
            }
            return std::string("<none>");
        };
        CHECK(field_of(R"({"techniques": ["proc"], "bogus": 1})") == "bogus");
        CHECK(field_of(R"({"techniques": ["proc"], "workload": {"rounds": -1}})") ==
              "workload.rounds");
        CHECK(field_of(R"({"techniques": ["proc"], "workload": {"kind": "x"}})") ==
              "workload.kind");
        CHECK(field_of(R"({"techniques": []})") == "techniques");
        CHECK(field_of(R"({"techniques": ["magic"]})") == "techniques[0]");
        CHECK(field_of(R"({"techniques": ["proc"], "memory_sizes": ["3XB"]})") ==
              "memory_sizes[0]");
        CHECK(field_of(R"({"techniques": ["proc"], "output": {"formats": ["xml"]}})") ==
              "output.formats[0]");
        CHECK(field_of("{not json") == "<root>");
        CHECK(field_of(R"({"techniques": ["proc"]})") == "memory_sizes");
        CHECK(field_of(R"({"techniques": ["proc"], "memory_sizes": [4096]})") == "<none>");
    }

    TEST_CASE("CSV, JSON and plot data agree")
    {
        const RunReport r = run_experiment(small_config(), costs());
        const RunReport back = parse_report_json(format_json(r));
        CHECK(format_csv(back) == format_csv(r));
        const std::string plot = format_plotdata(r);
        for (const auto& row : r.rows) {
            const std::string line =
                std::to_string(row.memory_bytes) + " " + fixed(row.overhead_tracked_pct);
            CHECK(plot.find(line) != std::string::npos);
        }
    }

    TEST_CASE("an empty report still has headers")
    {
        const RunReport empty;
        const std::string csv = format_csv(empty);
        CHECK(csv.rfind("technique,memory_bytes,", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
        CHECK(parse_report_json(format_json(empty)).rows.empty());
    }

    TEST_CASE("reports are written in every requested format")
    {
        const auto dir = std::filesystem::current_path() / "oohsim-test-reports";
        std::filesystem::remove_all(dir);
        const RunReport r = run_experiment(small_config(), costs());
        const auto written = emit_reports(
            r, {ReportFormat::Csv, ReportFormat::Json, ReportFormat::Plotdata}, dir);
        CHECK(written.size() == 3);
        CHECK(read_file(dir / "report.csv") == format_csv(r));
        CHECK(read_file(dir / "report.json") == format_json(r));
        std::filesystem::remove_all(dir);
        CHECK_THROWS_AS(write_text("/proc/oohsim/forbidden.csv", "x"), IoError);
    }

    TEST_CASE("Tracked time is the ideal time plus every stall in the ledger")
    {
        const RunReport r = run_experiment(small_config(), costs());
        REQUIRE(r.ledgers.size() == r.rows.size());
        for (std::size_t i = 0; i < r.rows.size(); ++i) {
            CAPTURE(to_string(r.rows[i].technique));
            CHECK(r.rows[i].tracked_us ==
                  doctest::Approx(r.rows[i].ideal_us + r.ledgers[i].total(Entity::Tracked))
                      .epsilon(1e-9));
        }
    }

    TEST_CASE("key-value and churn workloads run")
    {
        ExperimentConfig kv = ExperimentConfig::from_json(R"({
            "techniques": ["epml"],
            "workload": {"kind": "kv", "engine": "tiny", "requests": 2000, "checkpoint": true}
        })");
        const RunReport a = run_experiment(kv, costs());
        REQUIRE(a.rows.size() == 1);
        CHECK(a.rows[0].memory_bytes ==
              pages_for(kv_engine_footprint("tiny"), kDefaultPageSize) * kDefaultPageSize);
        CHECK(a.rows[0].checkpoint_ms > 0);
        ExperimentConfig churn = ExperimentConfig::from_json(R"({
            "techniques": ["spml"], "memory_sizes": ["1MB"], "workload": {"kind": "churn"}
        })");
        const RunReport b = run_experiment(churn, costs());
        REQUIRE(b.rows.size() == 1);
        CHECK(b.rows[0].missed > 0);
    }
}
