#include "doctest.h"
#include "oohsim/guest_kernel.hpp"

using namespace oohsim;

namespace {

struct Rig {
    CostTable costs = CostTable::defaults();
    CostLedger ledger;
    GuestMemory mem;
    Hypervisor hv;
    GuestKernel k;

    explicit Rig(std::size_t ring = 16384, std::uint64_t bytes = 1'000'000'000ULL)
        : hv(mem, costs, 1), k(mem, hv, costs, ledger, ring)
    {
        k.spawn(1);
        k.spawn(2);
        k.set_tracked_bytes(bytes);
    }

    void fill_guest_buffer(Pid pid, std::size_t n)
    {
        auto* b = k.guest_buffer(pid);
        REQUIRE(b != nullptr);
        for (std::size_t i = 0; i < n; ++i) {
            b->log(i + 1);
        }
    }
};

}  // namespace

TEST_SUITE("guest-kernel")
{
    TEST_CASE("registering a pid twice is rejected")
    {
        Rig r;
        r.k.register_tracked(1, Technique::Proc);
        CHECK(r.k.is_registered(1));
        CHECK_THROWS_AS(r.k.register_tracked(1, Technique::Proc), AlreadyRegistered);
        CHECK_THROWS_AS(r.k.unregister_tracked(2), NotRegistered);
    }

    TEST_CASE("EPML registration performs exactly one hypercall")
    {
        Rig r;
        r.k.register_tracked(1, Technique::Epml);
        CHECK(r.ledger.counts().hypercalls == 1);
        CHECK(r.ledger.get(Entity::Tracker, Charge::M10) ==
              doctest::Approx(r.costs.cost_of(Metric::M10, 0)));
    }

    TEST_CASE("SPML registration charges init_pml")
    {
        Rig r;
        r.k.register_tracked(1, Technique::Spml);
        CHECK(r.ledger.get(Entity::Tracker, Charge::M9) == doctest::Approx(5495.0));
        CHECK(r.hv.vcpu(0).flags.enable_by_guest);
    }

    TEST_CASE("an EPML schedule in and out costs three vmwrites and one vmread")
    {
        Rig r;
        r.k.register_tracked(1, Technique::Epml);
        const auto before = r.ledger.counts();
        const Micros in = r.k.on_schedule(1, SchedDirection::In);
        const Micros out = r.k.on_schedule(1, SchedDirection::Out);
        CHECK(r.ledger.counts().vmwrites - before.vmwrites == 3);
        CHECK(r.ledger.counts().vmreads - before.vmreads == 1);
        const Micros want = 3 * r.costs.cost_of(Metric::M8, 0) + r.costs.cost_of(Metric::M7, 0);
        CHECK(in + out == doctest::Approx(want));
        CHECK(r.ledger.counts().hypercalls == 1);
    }

    TEST_CASE("SPML schedule out flushes a block for the pid")
    {
        Rig r;
        r.k.register_tracked(1, Technique::Spml);
        r.k.on_schedule(1, SchedDirection::In);
        for (int i = 0; i < 12; ++i) {
            r.hv.vcpu(0).pml.log_dirty(r.mem.allocate(), Gva{0}, true, false);
        }
        r.k.on_schedule(1, SchedDirection::Out);
        REQUIRE(r.hv.ring().blocks().size() == 1);
        CHECK(r.hv.ring().blocks().front().pid == 1);
        CHECK(r.hv.ring().blocks().front().count() == 12);
    }

    TEST_CASE("switching an untracked pid costs nothing")
    {
        Rig r;
        r.k.register_tracked(1, Technique::Epml);
        const auto before = r.ledger.counts().sched_events;
        CHECK(r.k.on_schedule(2, SchedDirection::In) == 0);
        CHECK(r.k.on_schedule(2, SchedDirection::Out) == 0);
        CHECK(r.ledger.counts().sched_events == before);
    }

    TEST_CASE("a full guest buffer is copied to the ring and re-armed")
    {
        Rig r;
        r.k.register_tracked(1, Technique::Epml);
        r.k.on_schedule(1, SchedDirection::In);
        r.fill_guest_buffer(1, 512);
        r.k.deliver_guest_buffer_full(1);
        CHECK(r.k.epml_ring().size() == 512);
        CHECK(r.k.guest_buffer(1)->index() == 511);
    }

    TEST_CASE("a spurious guest buffer interrupt is a no-op")
    {
        Rig r;
        r.k.register_tracked(1, Technique::Epml);
        r.k.on_schedule(1, SchedDirection::In);
        CHECK(r.k.deliver_guest_buffer_full(1) == 0);
        CHECK(r.k.epml_ring().size() == 0);
    }

    TEST_CASE("a nearly full ring takes what fits and the rest stays in the buffer")
    {
        Rig r(612);
        r.k.register_tracked(1, Technique::Epml);
        r.k.on_schedule(1, SchedDirection::In);
        r.k.epml_ring().push(std::vector<Gva>(512, Gva{9999}));
        REQUIRE(r.k.epml_ring().free_slots() == 100);
        r.fill_guest_buffer(1, 512);
        r.k.deliver_guest_buffer_full(1);
        CHECK(r.k.epml_ring().size() == 612);
        CHECK(r.k.guest_buffer(1)->count() == 412);
        CHECK(r.k.guest_buffer(1)->log(1) == BufferOutcome::Full);
        const auto drained = r.k.consume_epml_ring();
        std::size_t held = r.k.epml_ring().size() + r.k.guest_buffer(1)->count();
        CHECK(drained.size() + held == 1024);
    }

    TEST_CASE("clearing soft-dirty bits costs the measured time per size")
    {
        Rig big;
        CHECK(big.k.clear_soft_dirty(1) == doctest::Approx(2234.0));
        CHECK(big.k.clear_soft_dirty(1) == doctest::Approx(2234.0));
        Rig small(16384, 1'000'000);
        CHECK(small.k.clear_soft_dirty(1) == doctest::Approx(32.0));
    }

    TEST_CASE("reading pagemap reports the pages written since the clear")
    {
        Rig r;
        auto& p = r.k.process(1);
        p.pt.map(r.mem, Gva{1});
        p.pt.map(r.mem, Gva{2});
        r.k.clear_soft_dirty(1);
        const auto empty = r.k.read_pagemap(1);
        CHECK(empty.soft_dirty.empty());
        CHECK(empty.cost == doctest::Approx(594187.0));
        REQUIRE(p.pt.write(r.mem, Gva{2}).faulted);
        p.pt.resolve_soft_dirty_fault(Gva{2});
        p.pt.write(r.mem, Gva{2});
        CHECK(r.k.read_pagemap(1).soft_dirty == std::vector<Gva>{Gva{2}});
    }

    TEST_CASE("userfaultfd protects only the registered range")
    {
        Rig r;
        auto& p = r.k.process(1);
        for (std::uint64_t g = 0; g < 8; ++g) {
            p.pt.map(r.mem, Gva{g});
        }
        r.k.uffd_register(1, {Gva{0}, Gva{3}});
        const WriteOutcome inside = p.pt.write(r.mem, Gva{2});
        CHECK(inside.faulted);
        CHECK(inside.reason == FaultReason::UffdWriteProtect);
        p.state = ProcState::SuspendedOnFault;
        r.k.uffd_resolve(1, Gva{2});
        CHECK(p.state == ProcState::Runnable);
        CHECK_FALSE(p.pt.write(r.mem, Gva{2}).faulted);
        CHECK_FALSE(p.pt.write(r.mem, Gva{6}).faulted);
        CHECK_THROWS_AS(r.k.uffd_resolve(1, Gva{6}), NotRegistered);
    }

    TEST_CASE("unknown pids are reported")
    {
        Rig r;
        CHECK_THROWS_AS(r.k.process(77), UnknownPid);
    }
}
