#pragma once

// Brute-force reference models the tests compare the simulator against.
// Deliberately naive: plain containers, no shared code with the library.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "oohsim/workload.hpp"

namespace oracle {

/// Replays a workload op by op and keeps, per page, when it was last
/// written, unmapped and relocated.
struct Replay {
    std::set<std::uint64_t> mapped;
    std::map<std::uint64_t, std::size_t> last_write;
    std::map<std::uint64_t, std::size_t> last_relocate;
    std::size_t last_checkpoint = 0;
    bool any_checkpoint = false;

    explicit Replay(const oohsim::Workload& w)
    {
        for (const auto g : w.premapped) {
            mapped.insert(g.value);
        }
        for (std::size_t i = 0; i < w.ops.size(); ++i) {
            const auto& op = w.ops[i];
            const auto g = op.gva.value;
            switch (op.kind) {
            case oohsim::OpKind::Write:
                mapped.insert(g);
                last_write[g] = i;
                break;
            case oohsim::OpKind::Unmap:
                if (mapped.erase(g) > 0) {
                    last_write.erase(g);
                    last_relocate.erase(g);
                }
                break;
            case oohsim::OpKind::Relocate:
                if (mapped.contains(g)) {
                    last_relocate[g] = i;
                }
                break;
            case oohsim::OpKind::Compute:
                break;
            case oohsim::OpKind::Checkpoint:
                last_checkpoint = i;
                any_checkpoint = true;
                break;
            }
        }
    }

    bool written_since_checkpoint(std::uint64_t g) const
    {
        auto it = last_write.find(g);
        return it != last_write.end() && (!any_checkpoint || it->second > last_checkpoint);
    }

    /// Pages written since the last checkpoint and mapped at the end.
    std::set<oohsim::Gva> dirty() const
    {
        std::set<oohsim::Gva> out;
        for (const auto g : mapped) {
            if (written_since_checkpoint(g)) {
                out.insert(oohsim::Gva{g});
            }
        }
        return out;
    }

    /// Dirty pages whose GPA changed after their last write.
    std::set<oohsim::Gva> moved_after_write() const
    {
        std::set<oohsim::Gva> out;
        for (const auto g : dirty()) {
            auto r = last_relocate.find(g.value);
            if (r != last_relocate.end() && r->second > last_write.at(g.value)) {
                out.insert(g);
            }
        }
        return out;
    }
};

/// Reference PML buffer: a list of entries and an index, nothing else.
struct PmlModel {
    int index = 512;
    bool paused = false;
    std::vector<std::uint64_t> entries;

    enum Result { Logged, Full, Disabled };

    Result log(std::uint64_t v)
    {
        if (index == 512) {
            return Disabled;
        }
        if (index < 0 || paused) {
            return Full;
        }
        entries.push_back(v);
        --index;
        return Logged;
    }

    void reset(int v)
    {
        index = v;
        paused = false;
        entries.clear();
    }
};

}  // namespace oracle
