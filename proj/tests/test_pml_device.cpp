#include "doctest.h"
#include "fuzz.hpp"
#include "oohsim/pml_device.hpp"

using namespace oohsim;

namespace {

PmlBuffer armed()
{
    PmlBuffer b;
    b.reset(511);
    return b;
}

}  // namespace

TEST_SUITE("pml-device")
{
    TEST_CASE("one log lands in slot 511 and decrements the index")
    {
        PmlBuffer b = armed();
        CHECK(b.log(77) == BufferOutcome::Logged);
        CHECK(b.index() == 510);
        CHECK(b.entries() == std::vector<std::uint64_t>{77});
    }

    TEST_CASE("512 logs fill the buffer and the 513th attempt reports full")
    {
        PmlBuffer b = armed();
        for (int i = 0; i < 512; ++i) {
            REQUIRE(b.log(static_cast<std::uint64_t>(i)) == BufferOutcome::Logged);
        }
        CHECK(b.index() == -1);
        CHECK(b.count() == 512);
        CHECK(b.log(999) == BufferOutcome::Full);
        CHECK(b.count() == 512);
        CHECK(b.rejected() == 1);
    }

    TEST_CASE("index 512 disables logging and leaves the buffer unchanged")
    {
        PmlBuffer b = armed();
        b.log(1);
        b.reset(512);
        CHECK(b.log(2) == BufferOutcome::Disabled);
        CHECK(b.count() == 0);
        CHECK(b.index() == 512);
    }

    TEST_CASE("reset after full resumes at slot 511")
    {
        PmlBuffer b = armed();
        for (int i = 0; i < 513; ++i) {
            b.log(static_cast<std::uint64_t>(i));
        }
        b.reset(511);
        CHECK(b.log(5) == BufferOutcome::Logged);
        CHECK(b.entries() == std::vector<std::uint64_t>{5});
    }

    TEST_CASE("only the protocol index values are accepted")
    {
        PmlBuffer b;
        CHECK_THROWS_AS(b.reset(300), InvalidValue);
        CHECK_THROWS_AS(b.reset(-1), InvalidValue);
        CHECK_NOTHROW(b.reset(511));
        CHECK_NOTHROW(b.reset(512));
    }

    TEST_CASE("take_oldest compacts the remaining entries")
    {
        PmlBuffer b = armed();
        for (std::uint64_t v : {1, 2, 3, 4}) {
            b.log(v);
        }
        CHECK(b.take_oldest(3) == std::vector<std::uint64_t>{1, 2, 3});
        CHECK(b.entries() == std::vector<std::uint64_t>{4});
        CHECK(b.index() == 510);
    }

    TEST_CASE("a partly drained full buffer stays paused until reset")
    {
        PmlBuffer b = armed();
        for (int i = 0; i < 512; ++i) {
            b.log(static_cast<std::uint64_t>(i));
        }
        b.take_oldest(100);
        CHECK(b.paused());
        CHECK(b.log(1) == BufferOutcome::Full);
        b.reset(511);
        CHECK(b.log(1) == BufferOutcome::Logged);
    }

    TEST_CASE("EPML logs the GVA into the current guest buffer")
    {
        PmlState s;
        s.reset_index_hv(511);
        s.set_epml_enabled(true);
        s.allocate_guest_buffer(Hpa{0x9000});
        s.set_guest_pml_address(Hpa{0x9000});
        s.reset_index_guest(511);
        const LogResult r = s.log_dirty(Gpa{40}, Gva{7});
        CHECK(r.hv == BufferOutcome::Logged);
        CHECK(r.guest == BufferOutcome::Logged);
        CHECK(s.hv_buffer().entries() == std::vector<std::uint64_t>{40});
        CHECK(s.current_guest_buffer()->entries() == std::vector<std::uint64_t>{7});
    }

    TEST_CASE("guest buffer full is reported independently of the hypervisor buffer")
    {
        PmlState s;
        s.reset_index_hv(511);
        s.set_epml_enabled(true);
        s.allocate_guest_buffer(Hpa{1});
        s.set_guest_pml_address(Hpa{1});
        s.reset_index_guest(511);
        for (std::uint64_t i = 0; i < 512; ++i) {
            s.log_dirty(Gpa{i}, Gva{i});
        }
        s.hv_buffer().take_oldest(512);
        s.reset_index_hv(511);
        const LogResult r = s.log_dirty(Gpa{600}, Gva{600});
        CHECK(r.hv == BufferOutcome::Logged);
        CHECK(r.guest == BufferOutcome::Full);
    }

    TEST_CASE("shadow VMCS write of the guest index needs no exit and disables logging")
    {
        GuestMemory mem;
        const Gpa g = mem.allocate();
        PmlState s;
        s.set_epml_enabled(true);
        s.allocate_guest_buffer(mem.hpa_of(g));
        ShadowVmcs v = ShadowVmcs::for_epml(s, mem.ept());
        CHECK(v.guest_vmwrite(VmcsField::GuestPmlAddress, g.value) == VmxResult::Ok);
        CHECK(v.guest_vmwrite(VmcsField::GuestPmlIndex, 512) == VmxResult::Ok);
        CHECK(v.traps() == 0);
        CHECK(s.log_dirty(Gpa{3}, Gva{3}, false, true).guest == BufferOutcome::Disabled);
    }

    TEST_CASE("guest PML address is stored as the translated HPA")
    {
        GuestMemory mem;
        const Gpa g = mem.allocate();
        PmlState s;
        ShadowVmcs v = ShadowVmcs::for_epml(s, mem.ept());
        REQUIRE(v.guest_vmwrite(VmcsField::GuestPmlAddress, g.value) == VmxResult::Ok);
        CHECK(s.guest_pml_address() == mem.hpa_of(g));
        const auto rd = v.guest_vmread(VmcsField::GuestPmlAddress);
        CHECK(rd.status == VmxResult::Ok);
        CHECK(rd.value == mem.hpa_of(g).value);
        CHECK_THROWS_AS(v.guest_vmwrite(VmcsField::GuestPmlAddress, 999999), TranslationFault);
    }

    TEST_CASE("fields outside the bitmaps trap")
    {
        GuestMemory mem;
        PmlState s;
        ShadowVmcs v = ShadowVmcs::for_epml(s, mem.ept());
        CHECK(v.guest_vmwrite(VmcsField::PmlIndex, 511) == VmxResult::Trap);
        CHECK(v.guest_vmread(VmcsField::PmlAddress).status == VmxResult::Trap);
        CHECK(v.traps() == 2);
        CHECK(s.hv_buffer().disabled());
    }

    TEST_CASE("guest index reads 508 after three logs")
    {
        GuestMemory mem;
        const Gpa g = mem.allocate();
        PmlState s;
        s.set_epml_enabled(true);
        s.allocate_guest_buffer(mem.hpa_of(g));
        ShadowVmcs v = ShadowVmcs::for_epml(s, mem.ept());
        v.guest_vmwrite(VmcsField::GuestPmlAddress, g.value);
        v.guest_vmwrite(VmcsField::GuestPmlIndex, 511);
        for (std::uint64_t i = 0; i < 3; ++i) {
            s.log_dirty(Gpa{i}, Gva{i}, false, true);
        }
        CHECK(v.guest_vmread(VmcsField::GuestPmlIndex).value == 508);
        CHECK(v.vmwrites() == 2);
        CHECK(v.vmreads() == 1);
    }

    TEST_CASE("fuzzed traces agree with the reference buffer")
    {
        for (std::uint64_t seed = 1; seed <= 300; ++seed) {
            const std::string msg = fuzz::pml_trace(seed);
            REQUIRE_MESSAGE(msg.empty(), msg);
        }
    }
}
