#include <sstream>

#include "doctest.h"
#include "fuzz.hpp"
#include "oohsim/cost_model.hpp"

using namespace oohsim;

namespace {

CostTable with(const std::string& text)
{
    CostTable t = CostTable::defaults();
    std::istringstream in(text);
    t.apply(in, "test");
    return t;
}

}  // namespace

TEST_SUITE("cost-model")
{
    TEST_CASE("fixed metrics do not depend on size")
    {
        const CostTable t = CostTable::defaults();
        CHECK(t.cost_of(Metric::M8, 1'000'000) == doctest::Approx(0.801));
        CHECK(t.cost_of(Metric::M8, 1'000'000'000) == doctest::Approx(0.801));
        CHECK(t.cost_of(Metric::M7, 0) == doctest::Approx(0.936));
    }

    TEST_CASE("size-dependent metrics hit their anchors and interpolate linearly")
    {
        const CostTable t = CostTable::defaults();
        CHECK(t.cost_of(Metric::M17, 1'000'000'000) == doctest::Approx(15738.0 * 1000));
        CHECK(t.cost_of(Metric::M17, 750'000'000) == doctest::Approx(9930.5 * 1000));
        CHECK(t.cost_of(Metric::M16, 1'000'000'000) == doctest::Approx(594187.0));
        CHECK(t.cost_of(Metric::M15, 1'000'000) == doctest::Approx(32.0));
    }

    TEST_CASE("sizes below the first anchor use the first anchor")
    {
        const CostTable t = CostTable::defaults();
        CHECK(t.cost_of(Metric::M16, 4096) == doctest::Approx(t.cost_of(Metric::M16, 1'000'000)));
    }

    TEST_CASE("per-page cost spreads the total over the pages")
    {
        const CostTable t = CostTable::defaults();
        const double pages = 1e9 / 4096.0;
        CHECK(t.per_page(Metric::M17, 1'000'000'000) * pages ==
              doctest::Approx(t.cost_of(Metric::M17, 1'000'000'000)));
        CHECK(t.per_page(Metric::M17, 0) == 0);
    }

    TEST_CASE("the estimator reduces to the vanilla time without events")
    {
        CostTable t = with("M18@1MB = 0\nM18@10MB = 0\nM18@50MB = 0\nM18@100MB = 0\n"
                           "M18@250MB = 0\nM18@500MB = 0\nM18@1GB = 0\n");
        CHECK(estimate_epml(1234.5, 0, t, 1'000'000).p_epml == doctest::Approx(1234.5));
    }

    TEST_CASE("the estimator adds three vmwrites and one vmread per event")
    {
        const CostTable t = CostTable::defaults();
        const EpmlEstimate e = estimate_epml(1e6, 1000, t, 1'000'000);
        CHECK(e.p_epml == doctest::Approx(1e6 + 1000 * (3 * 0.801 + 0.936) + e.c_copyrb));
        CHECK(e.c_copyrb == doctest::Approx(t.cost_of(Metric::M18, 1'000'000)));
    }

    TEST_CASE("the estimator tracks the event-driven EPML simulation")
    {
        const CostTable t = CostTable::defaults();
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto c = fuzz::estimator_config(t, seed);
            CAPTURE(seed);
            CHECK(c.rel_error() <= 0.01);
        }
    }

    TEST_CASE("overhead is relative to the ideal time")
    {
        CHECK(overhead_pct(110, 100) == doctest::Approx(10.0));
        CHECK(overhead_pct(100, 100) == doctest::Approx(0.0));
        CHECK_THROWS_AS(overhead_pct(1, 0), SimError);
    }

    TEST_CASE("sizes parse and format in decimal units")
    {
        CHECK(parse_size("1MB") == 1'000'000);
        CHECK(parse_size("250MB") == 250'000'000);
        CHECK(parse_size("1GB") == 1'000'000'000);
        CHECK(parse_size("4096") == 4096);
        CHECK(format_size(1'000'000'000) == "1GB");
        CHECK(format_size(50'000'000) == "50MB");
        CHECK(table_sizes().size() == 7);
        CHECK_THROWS_AS(parse_size("12XB"), SimError);
    }

    TEST_CASE("metric names round-trip")
    {
        CHECK(metric_from_string("M17") == Metric::M17);
        CHECK_FALSE(metric_from_string("M19"));
        CHECK(metric_name(Metric::M3) == "M3");
    }

    TEST_CASE("calibration overrides apply on top of the defaults")
    {
        const CostTable t = with("# comment\nM8 = 2.5\nM17@1GB = 100  # ms\npage_write_us = 1\n");
        CHECK(t.cost_of(Metric::M8, 0) == doctest::Approx(2.5));
        CHECK(t.cost_of(Metric::M17, 1'000'000'000) == doctest::Approx(100000.0));
        CHECK(t.timing().page_write_us == 1);
    }

    TEST_CASE("written calibration reloads to the same table")
    {
        const CostTable t = CostTable::defaults();
        std::ostringstream out;
        t.write(out);
        CostTable back = CostTable::defaults();
        std::istringstream in(out.str());
        back.apply(in);
        for (int k = 1; k <= kMetricCount; ++k) {
            for (const auto b : table_sizes()) {
                CHECK(back.cost_of(static_cast<Metric>(k), b) ==
                      doctest::Approx(t.cost_of(static_cast<Metric>(k), b)));
            }
        }
    }

    TEST_CASE("malformed calibration is rejected with its location")
    {
        CHECK_THROWS_AS(with("M8 0.9\n"), CalibrationError);
        CHECK_THROWS_AS(with("M99 = 1\n"), CalibrationError);
        CHECK_THROWS_AS(with("M8 = -1\n"), CalibrationError);
        CHECK_THROWS_AS(with("M8 = abc\n"), CalibrationError);
        CHECK_THROWS_AS(with("M17 = 3\n"), CalibrationError);
        CHECK_THROWS_AS(with("page_size = 0\n"), CalibrationError);
        try {
            with("\n\nbogus = 1\n");
            FAIL("expected a calibration error");
        } catch (const CalibrationError& e) {
            CHECK(std::string(e.what()).find("test:3") != std::string::npos);
        }
        CHECK_THROWS_AS(CostTable::load("/nonexistent/calibration.txt"), CalibrationError);
    }

    TEST_CASE("the ledger accumulates per entity and charge")
    {
        CostLedger l;
        l.charge(Entity::Tracked, Charge::M5, 2);
        l.charge(Entity::Tracked, Charge::M5, 3);
        l.charge(Entity::Tracked, Charge::VmExit, 10);
        l.charge(Entity::Tracker, Charge::M5, 1);
        CHECK(l.get(Entity::Tracked, Charge::M5) == 5);
        CHECK(l.total(Entity::Tracked) == 15);
        CHECK(l.total(Entity::Hypervisor) == 0);
    }
}
