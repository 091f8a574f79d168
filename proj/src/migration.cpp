#include "oohsim/migration.hpp"

#include <cmath>
#include <set>

#include "oohsim/address_space.hpp"
#include "oohsim/hypervisor.hpp"
#include "oohsim/pml_device.hpp"

namespace oohsim {

MigrationReport run_migration(const CostTable& costs, const MigrationJob& job,
                              double concurrent_vmexits_per_s)
{
    constexpr Pid kVmPid = 1;
    const std::uint64_t pages = pages_for(job.vm_bytes, costs.page_size());
    if (pages == 0) {
        throw SimError("migrating VM has no memory");
    }
    const auto& t = costs.timing();
    const double own_rate = job.dirty_pages_per_s / kPmlEntries;
    MigrationReport rep;
    rep.share = 1.0 - (own_rate + concurrent_vmexits_per_s) * t.hv_vmexit_us / 1e6;
    if (!(rep.share > 0)) {
        throw SimError("hypervisor saturated by PML-full vmexits");
    }

    GuestMemory mem(costs.page_size());
    Hypervisor hv(mem, costs, 1);
    GuestPageTable pt(kVmPid);
    for (std::uint64_t i = 0; i < pages; ++i) {
        pt.map(mem, Gva{i});
    }
    mem.ept().clear_all_dirty();
    hv.coordinate(CoordinationRequest::VmmEnable, 0, kVmPid);

    std::uint64_t cursor = 0;
    double carry = 0;
    auto guest_writes = [&](Micros span) {
        carry += job.dirty_pages_per_s * span / 1e6;
        const auto n = static_cast<std::uint64_t>(std::floor(carry));
        carry -= static_cast<double>(n);
        auto& v = hv.vcpu(0);
        for (std::uint64_t k = 0; k < n; ++k) {
            const WriteOutcome out = pt.write(mem, Gva{cursor});
            cursor = (cursor + 1) % pages;
            if (!out.wants_log()) {
                continue;
            }
            if (v.pml.log_dirty(out.gpa, Gva{0}, out.ept_dirty_transition, false).hv ==
                BufferOutcome::Full) {
                hv.handle_pml_full_vmexit(0);
                ++rep.vmexits;
                v.pml.hv_buffer().log(out.gpa.value);
            }
        }
    };

    std::uint64_t to_send = pages;
    for (std::uint32_t round = 0;; ++round) {
        const Micros d =
            static_cast<double>(to_send) * t.migration_send_us_per_page / rep.share;
        rep.rounds.push_back(MigrationRound{to_send, d});
        rep.pages_sent += to_send;
        rep.total_us += d;
        if (to_send <= job.threshold_pages) {
            rep.converged = true;
            break;
        }
        if (round + 1 >= job.max_rounds) {
            break;
        }
        guest_writes(d);
        hv.coordinate(CoordinationRequest::VmmEnable, 0, kVmPid);
        const auto log = hv.take_migration_log();
        to_send = std::set<Gpa>(log.begin(), log.end()).size();
        if (to_send == 0) {
            // Nothing left for a stop-and-copy round.
            rep.converged = true;
            break;
        }
    }
    return rep;
}

double vmexit_rate(const RunResult& r)
{
    const Micros span = r.ideal_us + r.ledger.get(Entity::Tracked, Charge::VmExit);
    if (!(span > 0)) {
        return 0;
    }
    return static_cast<double>(r.ledger.counts().vmexits) / (span / 1e6);
}

CoexistenceResult coexistence_experiment(const CostTable& costs, const MigrationJob& job,
                                         std::uint64_t vm1_bytes)
{
    CoexistenceResult res;
    SimulationConfig cfg;
    cfg.tracker = TrackerConfig::of(Technique::Spml);
    Simulation vm1(costs, cfg,
                   make_microbench(MicroBenchSpec{pages_for(vm1_bytes, costs.page_size()), 1},
                                   costs.page_size()));
    res.vm1_vmexits_per_s = vmexit_rate(vm1.run());
    res.baseline = run_migration(costs, job, 0);
    res.concurrent = run_migration(costs, job, res.vm1_vmexits_per_s);
    res.inflation_pct = overhead_pct(res.concurrent.total_us, res.baseline.total_us);
    return res;
}

}  // namespace oohsim
