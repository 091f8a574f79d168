#include "doctest.h"
#include "oohsim/hypervisor.hpp"
#include "oohsim/migration.hpp"

using namespace oohsim;

namespace {

struct Rig {
    CostTable costs = CostTable::defaults();
    GuestMemory mem;
    Hypervisor hv;

    explicit Rig(std::size_t ring = 16384) : hv(mem, costs, 1, ring) {}

    VcpuPml& v() { return hv.vcpu(0); }

    std::vector<Gpa> log(std::size_t n)
    {
        std::vector<Gpa> out;
        for (std::size_t i = 0; i < n; ++i) {
            const Gpa g = mem.allocate();
            REQUIRE(v().pml.log_dirty(g, Gva{0}, true, false).hv == BufferOutcome::Logged);
            out.push_back(g);
        }
        return out;
    }

    void fill() { log(512); }
};

}  // namespace

TEST_SUITE("hypervisor")
{
    TEST_CASE("init_pml arms the buffer for the guest")
    {
        Rig r;
        r.hv.hypercall(HypercallKind::InitPml, 0);
        CHECK(r.v().flags.enable_by_guest);
        r.hv.hypercall(HypercallKind::EnableLogging, 0, 0, 1);
        CHECK(r.v().pml.hv_buffer().index() == 511);
    }

    TEST_CASE("disable_logging flushes a framed block for the departing pid")
    {
        Rig r;
        r.hv.hypercall(HypercallKind::InitPml, 0);
        r.hv.hypercall(HypercallKind::EnableLogging, 0, 0, 42);
        const auto gpas = r.log(5);
        r.hv.hypercall(HypercallKind::DisableLogging, 0);
        REQUIRE(r.hv.ring().blocks().size() == 1);
        const auto& b = r.hv.ring().blocks().front();
        CHECK(b.pid == 42);
        CHECK(b.count() == 5);
        CHECK(std::vector<Gpa>(b.addresses.begin(), b.addresses.end()) == gpas);
        CHECK(r.hv.ring().used_slots() == 7);
        CHECK(r.v().pml.hv_buffer().index() == 512);
    }

    TEST_CASE("protocol calls before init_pml are rejected")
    {
        Rig r;
        CHECK_THROWS_AS(r.hv.hypercall(HypercallKind::EnableLogging, 0, 0, 1), ProtocolError);
        CHECK_THROWS_AS(r.hv.hypercall(HypercallKind::DisableLogging, 0), ProtocolError);
        CHECK_THROWS_AS(r.hv.hypercall(HypercallKind::DeactivatePml, 0), ProtocolError);
        CHECK_THROWS_AS(r.hv.hypercall(HypercallKind::DeactivateShadowVmcs, 0), ProtocolError);
    }

    TEST_CASE("hypercalls are charged their measured cost")
    {
        Rig r;
        CHECK(r.hv.hypercall(HypercallKind::InitPml, 0) == doctest::Approx(r.costs.cost_of(Metric::M9, 0)));
        CHECK(r.hv.hypercall(HypercallKind::InitShadowVmcs, 0) ==
              doctest::Approx(r.costs.cost_of(Metric::M10, 0)));
    }

    TEST_CASE("guest-only full buffer goes to the ring and not the migration log")
    {
        Rig r;
        r.hv.coordinate(CoordinationRequest::GuestEnable, 0);
        r.hv.coordinate(CoordinationRequest::SchedIn, 0, 7);
        r.fill();
        const Actions a = r.hv.handle_pml_full_vmexit(0);
        CHECK(a.to_ring == 512);
        CHECK(a.to_migration_log == 0);
        CHECK(r.hv.migration_log().empty());
        REQUIRE(r.hv.ring().blocks().size() == 1);
        CHECK(r.hv.ring().blocks().front().pid == 7);
        CHECK(r.hv.ring().blocks().front().count() == 512);
        CHECK(r.hv.vmexits() == 1);
        CHECK(a.armed);
    }

    TEST_CASE("simultaneous use delivers the same GPAs to both consumers")
    {
        Rig r;
        r.hv.coordinate(CoordinationRequest::VmmEnable, 0);
        r.hv.coordinate(CoordinationRequest::GuestEnable, 0);
        r.hv.coordinate(CoordinationRequest::SchedIn, 0, 3);
        const auto gpas = r.log(512);
        r.hv.handle_pml_full_vmexit(0);
        CHECK(r.hv.migration_log() == gpas);
        const auto& b = r.hv.ring().blocks().front().addresses;
        CHECK(std::vector<Gpa>(b.begin(), b.end()) == gpas);
    }

    TEST_CASE("a full ring drops the batch and injects an interrupt")
    {
        Rig r(514);
        int interrupts = 0;
        r.hv.on_ring_full([&] { ++interrupts; });
        r.hv.coordinate(CoordinationRequest::GuestEnable, 0);
        r.hv.coordinate(CoordinationRequest::SchedIn, 0, 1);
        r.fill();
        r.hv.handle_pml_full_vmexit(0);
        CHECK(r.hv.ring().full());
        r.fill();
        const Actions a = r.hv.handle_pml_full_vmexit(0);
        CHECK(a.to_ring == 0);
        CHECK(a.ring_dropped == 512);
        CHECK(a.interrupt_injected);
        CHECK(r.hv.ring().dropped() == 512);
        CHECK(interrupts >= 1);
        CHECK(r.hv.ring().consume(1).size() == 512);
        CHECK_FALSE(r.hv.ring().full());
    }

    TEST_CASE("guest disable keeps logging armed for the hypervisor")
    {
        Rig r;
        r.hv.coordinate(CoordinationRequest::VmmEnable, 0);
        r.hv.coordinate(CoordinationRequest::GuestEnable, 0);
        r.hv.coordinate(CoordinationRequest::GuestDisable, 0);
        CHECK_FALSE(r.v().flags.enable_by_guest);
        CHECK(r.v().pml.hv_buffer().index() == 511);
    }

    TEST_CASE("sched out without the hypervisor disables logging")
    {
        Rig r;
        r.hv.coordinate(CoordinationRequest::GuestEnable, 0);
        r.hv.coordinate(CoordinationRequest::SchedIn, 0, 1);
        r.hv.coordinate(CoordinationRequest::SchedOut, 0);
        CHECK(r.v().pml.hv_buffer().index() == 512);
    }

    TEST_CASE("sched in flushes pending entries to the migration log first")
    {
        Rig r;
        r.hv.coordinate(CoordinationRequest::VmmEnable, 0);
        const auto gpas = r.log(3);
        const Actions a = r.hv.coordinate(CoordinationRequest::SchedIn, 0, 9);
        CHECK(a.to_migration_log == 3);
        CHECK(r.hv.migration_log() == gpas);
        CHECK(r.v().pml.hv_buffer().count() == 0);
        CHECK(r.v().pml.hv_buffer().index() == 511);
    }

    TEST_CASE("migration with no dirtying converges in one round")
    {
        MigrationJob job;
        job.dirty_pages_per_s = 0;
        const MigrationReport m = run_migration(CostTable::defaults(), job);
        CHECK(m.rounds.size() == 1);
        CHECK(m.converged);
        CHECK(m.pages_sent == pages_for(job.vm_bytes, kDefaultPageSize));
    }

    TEST_CASE("concurrent vmexit load slows the migration down")
    {
        const auto costs = CostTable::defaults();
        MigrationJob job;
        job.vm_bytes = 32'000'000;
        const MigrationReport alone = run_migration(costs, job);
        const MigrationReport busy = run_migration(costs, job, 400);
        CHECK(busy.share < alone.share);
        CHECK(busy.total_us > alone.total_us);
    }

    TEST_CASE("coordination model check finds no violation")
    {
        const auto costs = CostTable::defaults();
        const ModelCheckResult shallow = model_check_coordination(costs, 6, 1);
        CHECK(shallow.violations.empty());
        CHECK(shallow.states > 1);
        const ModelCheckResult busy = model_check_coordination(costs, 4, 700);
        CHECK(busy.violations.empty());
    }
}
