#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>

#include "oohsim/hypervisor.hpp"

namespace oohsim {

namespace {

struct Entitlement {
    bool vmm = false;
    std::optional<Pid> guest;
};

struct Replay {
    std::vector<std::string> violations;
    std::tuple<bool, bool, bool, Pid, std::size_t, int> key;
};

Replay replay(const CostTable& costs, const std::vector<CoordinationRequest>& path,
              int writes_per_step)
{
    Replay out;
    GuestMemory mem(costs.page_size());
    Hypervisor hv(mem, costs, 1, std::size_t{1} << 22);
    GuestPageTable pt(1);
    auto& v = hv.vcpu(0);
    std::unordered_map<Gpa, Entitlement> expected;
    std::uint64_t next_gva = 0;
    Pid next_pid = 1;

    auto where = [&](std::size_t step) { return " after step " + std::to_string(step); };
    auto check_armed = [&](std::size_t step) {
        if (v.pml.hv_buffer().disabled() == v.flags.logging_required()) {
            out.violations.push_back("arming invariant broken" + where(step));
        }
    };

    for (std::size_t step = 0; step < path.size(); ++step) {
        const auto req = path[step];
        Pid pid = 0;
        if (req == CoordinationRequest::SchedIn) {
            pid = next_pid;
            next_pid = next_pid == 1 ? 2 : 1;
        }
        hv.coordinate(req, 0, pid);
        check_armed(step);
        for (int w = 0; w < writes_per_step; ++w) {
            const Gva g{next_gva++};
            pt.map(mem, g);
            const WriteOutcome wo = pt.write(mem, g);
            Entitlement e;
            e.vmm = v.flags.enable_by_vmm;
            if (v.flags.enable_by_guest && v.flags.sched_in) {
                e.guest = v.current_pid;
            }
            expected[wo.gpa] = e;
            if (!wo.wants_log()) {
                continue;
            }
            if (v.pml.log_dirty(wo.gpa, g, wo.ept_dirty_transition, false).hv ==
                BufferOutcome::Full) {
                hv.handle_pml_full_vmexit(0);
                check_armed(step);
                if (v.pml.hv_buffer().log(wo.gpa.value) != BufferOutcome::Logged) {
                    out.violations.push_back("entry refused after re-arm" + where(step));
                }
            }
        }
        check_armed(step);
    }

    const auto pending_count = v.pml.hv_buffer().count();
    out.key = {v.flags.enable_by_vmm, v.flags.enable_by_guest, v.flags.sched_in,
               v.current_pid, pending_count, v.pml.hv_buffer().index()};

    std::unordered_map<Gpa, int> in_log;
    for (const Gpa g : hv.migration_log()) {
        in_log[g]++;
    }
    std::unordered_map<Gpa, std::vector<Pid>> in_ring;
    for (const auto& b : hv.ring().blocks()) {
        for (const Gpa g : b.addresses) {
            in_ring[g].push_back(b.pid);
        }
    }
    std::unordered_map<Gpa, bool> pending;
    for (const auto raw : v.pml.hv_buffer().take_oldest(pending_count)) {
        pending[Gpa{raw}] = true;
    }
    for (const auto& [gpa, e] : expected) {
        const std::string id = "GPA " + std::to_string(gpa.value);
        const int logged = in_log.contains(gpa) ? in_log[gpa] : 0;
        const auto& ring = in_ring[gpa];
        if (pending.contains(gpa)) {
            if (logged > 0 || !ring.empty()) {
                out.violations.push_back(id + " delivered and still pending");
            }
            if (!e.vmm && !e.guest) {
                out.violations.push_back(id + " logged without any party enabled");
            }
            continue;
        }
        if (logged != (e.vmm ? 1 : 0)) {
            out.violations.push_back(id + " reached the migration log " +
                                     std::to_string(logged) + " times");
        }
        if (e.guest) {
            if (ring.size() != 1 || ring.front() != *e.guest) {
                out.violations.push_back(id + " not delivered to pid " +
                                         std::to_string(*e.guest));
            }
        } else if (!ring.empty()) {
            out.violations.push_back(id + " delivered to the ring without entitlement");
        }
    }
    if (hv.ring().dropped() > 0) {
        out.violations.push_back("ring dropped entries");
    }
    return out;
}

}  // namespace

ModelCheckResult model_check_coordination(const CostTable& costs, int depth, int writes_per_step)
{
    ModelCheckResult res;
    std::map<std::tuple<bool, bool, bool, Pid, std::size_t, int>, std::size_t> best;
    std::vector<CoordinationRequest> path;

    auto dfs = [&](auto&& self) -> void {
        ++res.nodes;
        Replay r = replay(costs, path, writes_per_step);
        for (auto& msg : r.violations) {
            std::string trace;
            for (const auto q : path) {
                trace += std::string(to_string(q)) + " ";
            }
            res.violations.push_back(msg + " [" + trace + "]");
        }
        if (!r.violations.empty()) {
            return;
        }
        auto it = best.find(r.key);
        if (it != best.end() && it->second <= path.size()) {
            return;
        }
        best[r.key] = path.size();
        if (static_cast<int>(path.size()) >= depth) {
            return;
        }
        for (const auto q : kAllRequests) {
            path.push_back(q);
            self(self);
            path.pop_back();
        }
    };
    dfs(dfs);
    res.states = best.size();
    return res;
}

}  // namespace oohsim
