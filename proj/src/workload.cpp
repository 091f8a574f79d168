#include "oohsim/workload.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

namespace oohsim {

Micros ideal_time(const Workload& w, const TimingParams& timing)
{
    Micros t = 0;
    for (const auto& op : w.ops) {
        if (op.kind == OpKind::Write) {
            t += timing.page_write_us;
        } else if (op.kind == OpKind::Compute) {
            t += op.duration;
        }
    }
    return t;
}

std::uint64_t pages_for(std::uint64_t bytes, std::size_t page_size)
{
    return bytes / page_size;
}

Workload make_microbench(const MicroBenchSpec& spec, std::size_t page_size)
{
    Workload w;
    w.name = "microbench";
    w.memory_bytes = spec.num_pages * page_size;
    w.premapped.reserve(spec.num_pages);
    for (std::uint64_t i = 0; i < spec.num_pages; ++i) {
        w.premapped.emplace_back(i);
    }
    w.ops.reserve(spec.num_pages * spec.rounds);
    for (std::uint32_t r = 0; r < spec.rounds; ++r) {
        for (std::uint64_t i = 0; i < spec.num_pages; ++i) {
            w.ops.push_back(Op{OpKind::Write, Gva{i}, i, 0});
        }
    }
    return w;
}

std::uint64_t kv_engine_footprint(const std::string& engine)
{
    if (engine == "baby") return 833'000'000ULL;
    if (engine == "cache") return 596'000'000ULL;
    if (engine == "stdhash") return 2'400'000'000ULL;
    if (engine == "stdtree") return 2'400'000ULL;
    if (engine == "tiny") return 2'200'000'000ULL;
    throw SimError("unknown key-value engine '" + engine + "'");
}

namespace {

/// Prefix sums over page weights with point updates.
class Fenwick {
public:
    explicit Fenwick(const std::vector<double>& w) : tree_(w.size() + 1, 0.0)
    {
        for (std::size_t i = 0; i < w.size(); ++i) {
            add(i, w[i]);
        }
    }

    void add(std::size_t i, double delta)
    {
        for (std::size_t k = i + 1; k < tree_.size(); k += k & (~k + 1)) {
            tree_[k] += delta;
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    std::size_t find(double target) const
    {
        std::size_t pos = 0;
        std::size_t step = std::bit_floor(tree_.size() - 1);
        for (; step > 0; step >>= 1) {
            if (pos + step < tree_.size() && tree_[pos + step] <= target) {
                pos += step;
                target -= tree_[pos];
            }
        }
        return std::min(pos, tree_.size() - 2);
    }

private:
    std::vector<double> tree_;
};

}  // namespace

Workload make_kv_workload(const KvWorkloadSpec& spec, std::size_t page_size)
{
    if (spec.footprint == 0) {
        throw SimError("kv footprint must be > 0");
    }
    const std::uint64_t pages = std::max<std::uint64_t>(1, pages_for(spec.footprint, page_size));
    Workload w;
    w.name = "kv-" + spec.engine;
    w.memory_bytes = pages * page_size;
    for (std::uint64_t i = 0; i < pages; ++i) {
        w.premapped.emplace_back(i);
    }

    std::mt19937_64 rng(spec.seed);
    std::vector<std::uint64_t> page_of_rank(pages);
    std::iota(page_of_rank.begin(), page_of_rank.end(), 0);
    std::shuffle(page_of_rank.begin(), page_of_rank.end(), rng);
    std::vector<std::uint64_t> rank_of_page(pages);
    for (std::uint64_t k = 0; k < pages; ++k) {
        rank_of_page[page_of_rank[k]] = k;
    }
    std::vector<double> weight(pages);
    for (std::uint64_t k = 0; k < pages; ++k) {
        weight[k] = 1.0 / std::pow(static_cast<double>(k + 1), spec.write_skew);
    }
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    // Zipf mass of the pages not yet written since they were (re)mapped.
    Fenwick untouched(weight);
    double untouched_mass = total;
    std::vector<bool> touched(pages, false);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::uint64_t> any_page(0, pages - 1);

    auto compute = [&](Micros us) {
        if (us <= 0) {
            return;
        }
        if (!w.ops.empty() && w.ops.back().kind == OpKind::Compute) {
            w.ops.back().duration += us;
        } else {
            w.ops.push_back(Op{OpKind::Compute, Gva{0}, 0, us});
        }
    };

    // Only the first write to a page after it is (re)mapped changes any
    // tracking state; later hits are folded into compute time. The gap to
    // the next first touch is geometric in the untouched mass.
    const Micros per_request = spec.request_us + spec.write_us;
    const Micros churn_period = spec.churn_rate > 0 ? 1e6 / spec.churn_rate : 0;
    Micros clock = 0;
    Micros next_churn = churn_period;
    std::uint64_t done = 0;
    while (done < spec.requests) {
        const std::uint64_t left = spec.requests - done;
        const double p = std::clamp(untouched_mass / total, 0.0, 1.0);
        std::uint64_t gap = left + 1;
        if (p >= 1.0) {
            gap = 1;
        } else if (p > 1e-12) {
            const double g = 1.0 + std::floor(std::log(1.0 - unit(rng)) / std::log1p(-p));
            gap = g < static_cast<double>(left + 1) ? static_cast<std::uint64_t>(g) : left + 1;
        }
        if (churn_period > 0) {
            const auto to_churn = static_cast<std::uint64_t>(
                std::max(0.0, std::ceil((next_churn - clock) / per_request)));
            if (to_churn < gap && to_churn <= left) {
                compute(static_cast<double>(to_churn) * per_request);
                done += to_churn;
                clock += static_cast<double>(to_churn) * per_request;
                const Gva g{any_page(rng)};
                w.ops.push_back(Op{OpKind::Relocate, g, 0, 0});
                if (touched[g.value]) {
                    touched[g.value] = false;
                    const std::uint64_t k = rank_of_page[g.value];
                    untouched.add(k, weight[k]);
                    untouched_mass += weight[k];
                }
                next_churn += churn_period;
                continue;
            }
        }
        if (gap > left) {
            compute(static_cast<double>(left) * per_request);
            break;
        }
        compute(static_cast<double>(gap - 1) * per_request + spec.request_us);
        std::size_t k = untouched.find(unit(rng) * untouched_mass);
        while (touched[page_of_rank[k]]) {
            k = (k + 1) % pages;
        }
        const std::uint64_t page = page_of_rank[k];
        touched[page] = true;
        untouched.add(k, -weight[k]);
        untouched_mass -= weight[k];
        done += gap;
        clock += static_cast<double>(gap) * per_request;
        w.ops.push_back(Op{OpKind::Write, Gva{page}, done, 0});
    }
    return w;
}

Workload make_churn_workload(const ChurnSpec& spec, std::size_t page_size)
{
    Workload w = make_microbench(MicroBenchSpec{spec.working_set_pages, 1}, page_size);
    w.name = "churn";
    const auto events = static_cast<std::uint64_t>(std::llround(spec.rate * spec.interval / 1e6));
    if (events == 0 || spec.working_set_pages == 0) {
        if (spec.interval > 0) {
            w.ops.push_back(Op{OpKind::Compute, Gva{0}, 0, spec.interval});
        }
        return w;
    }
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<std::uint64_t> any_page(0, spec.working_set_pages - 1);
    const Micros gap = spec.interval / static_cast<double>(events);
    for (std::uint64_t e = 0; e < events; ++e) {
        w.ops.push_back(Op{OpKind::Compute, Gva{0}, 0, gap});
        w.ops.push_back(Op{OpKind::Relocate, Gva{any_page(rng)}, 0, 0});
    }
    return w;
}

Workload make_fuzz_trace(const FuzzSpec& spec, std::size_t page_size)
{
    std::mt19937_64 rng(spec.seed);
    const std::uint64_t max_pages = std::max<std::uint64_t>(1, spec.max_pages);
    const std::uint64_t pages = std::uniform_int_distribution<std::uint64_t>(1, max_pages)(rng);
    const std::uint64_t premapped =
        std::uniform_int_distribution<std::uint64_t>(0, pages)(rng);
    const std::uint64_t nops =
        std::uniform_int_distribution<std::uint64_t>(0, 2 * pages + 16)(rng);

    Workload w;
    w.name = "fuzz";
    w.memory_bytes = pages * page_size;
    for (std::uint64_t i = 0; i < premapped; ++i) {
        w.premapped.emplace_back(i);
    }
    std::uniform_int_distribution<std::uint64_t> any_page(0, pages - 1);
    std::uniform_int_distribution<int> pick(0, 99);
    std::uniform_real_distribution<double> gap(0.0, 3000.0);
    for (std::uint64_t i = 0; i < nops; ++i) {
        const int p = pick(rng);
        const Gva g{any_page(rng)};
        if (spec.churn && p < 6) {
            w.ops.push_back(Op{OpKind::Unmap, g, 0, 0});
        } else if (spec.churn && p < 18) {
            w.ops.push_back(Op{OpKind::Relocate, g, 0, 0});
        } else if (p < 24) {
            w.ops.push_back(Op{OpKind::Compute, g, 0, gap(rng)});
        } else {
            w.ops.push_back(Op{OpKind::Write, g, rng(), 0});
        }
    }
    return w;
}

ReplayOracle replay_dirty_set(const Workload& w)
{
    ReplayOracle o;
    o.mapped.insert(w.premapped.begin(), w.premapped.end());
    for (const auto& op : w.ops) {
        switch (op.kind) {
        case OpKind::Write:
            o.mapped.insert(op.gva);
            o.dirty.insert(op.gva);
            o.relocated_after_write.erase(op.gva);
            break;
        case OpKind::Unmap:
            o.mapped.erase(op.gva);
            o.dirty.erase(op.gva);
            o.relocated_after_write.erase(op.gva);
            break;
        case OpKind::Relocate:
            if (o.dirty.contains(op.gva)) {
                o.relocated_after_write.insert(op.gva);
            }
            break;
        case OpKind::Compute:
            break;
        case OpKind::Checkpoint:
            o.dirty.clear();
            o.relocated_after_write.clear();
            break;
        }
    }
    return o;
}

}  // namespace oohsim
