#include "oohsim/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace oohsim {

namespace fs = std::filesystem;

std::string_view to_string(CheckpointMode m)
{
    return m == CheckpointMode::Full ? "full" : "incremental";
}

namespace {

std::vector<std::uint8_t> page_contents(Simulation& sim, Gva gva)
{
    if (!sim.memory().store().enabled()) {
        return {};
    }
    const auto t = sim.tracked().pt.translate(gva);
    if (!t) {
        throw SimError("dump of unmapped GVA page " + std::to_string(gva.value));
    }
    return sim.memory().store().read(sim.memory().hpa_of(t->gpa));
}

std::string hex(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

MemorySnapshot snapshot_memory(Simulation& sim)
{
    MemorySnapshot snap;
    for (const Gva g : sim.tracked().pt.mapped_pages()) {
        snap.emplace(g, page_contents(sim, g));
    }
    return snap;
}

Checkpointer::Checkpointer(Simulation& sim, bool baseline)
{
    if (baseline) {
        sim.set_start_hook([this](Simulation& s) {
            chain_.push_back(dump(s, CheckpointMode::Full, nullptr));
        });
    }
    sim.set_exploit(
        [this](Simulation& s, const IntervalResult& iv) { return on_checkpoint(s, iv); });
}

CheckpointImage Checkpointer::dump(Simulation& sim, CheckpointMode mode, const std::set<Gva>* dirty)
{
    CheckpointImage img;
    img.sequence_no = chain_.size();
    img.mode = mode;
    if (mode == CheckpointMode::Incremental) {
        img.parent = chain_.back().sequence_no;
    }
    auto& pt = sim.tracked().pt;
    img.mapped = pt.mapped_pages();
    std::sort(img.mapped.begin(), img.mapped.end());
    if (dirty == nullptr) {
        for (const Gva g : img.mapped) {
            img.pages.emplace(g, page_contents(sim, g));
        }
    } else {
        for (const Gva g : *dirty) {
            if (pt.contains(g)) {
                img.pages.emplace(g, page_contents(sim, g));
            }
        }
    }
    return img;
}

Micros Checkpointer::on_checkpoint(Simulation& sim, const IntervalResult& iv)
{
    if (chain_.empty() || chain_.front().mode != CheckpointMode::Full) {
        throw NoBaseline("incremental checkpoint without a full parent image");
    }
    chain_.push_back(dump(sim, CheckpointMode::Incremental, &iv.dirty));
    oracle_ = snapshot_memory(sim);

    const auto& t = sim.costs().timing();
    const Micros write_out = t.dump_us_per_page * static_cast<double>(chain_.back().pages.size());
    const Micros fixed = t.checkpoint_fixed_us;
    auto& ledger = sim.ledger();
    for (const Entity e : {Entity::Tracked, Entity::Tracker}) {
        ledger.charge(e, Charge::Dump, write_out);
        ledger.charge(e, Charge::CheckpointFixed, fixed);
    }
    checkpoint_ms_.push_back((iv.collect_us + write_out + fixed) / 1000.0);
    return write_out + fixed;
}

MemorySnapshot restore(const std::vector<CheckpointImage>& chain)
{
    if (chain.empty() || chain.front().mode != CheckpointMode::Full) {
        throw BrokenChain("chain must start with a full image");
    }
    MemorySnapshot mem;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const auto& img = chain[i];
        if (i > 0) {
            if (img.mode != CheckpointMode::Incremental ||
                img.parent != chain[i - 1].sequence_no) {
                throw BrokenChain("image " + std::to_string(img.sequence_no) +
                                  " does not follow image " +
                                  std::to_string(chain[i - 1].sequence_no));
            }
        }
        for (const auto& [g, bytes] : img.pages) {
            mem[g] = bytes;
        }
        const std::set<Gva> mapped(img.mapped.begin(), img.mapped.end());
        std::erase_if(mem, [&](const auto& kv) { return !mapped.contains(kv.first); });
        for (const Gva g : mapped) {
            if (!mem.contains(g)) {
                // Mapped since the parent but never reported: restore has nothing.
                mem.emplace(g, std::vector<std::uint8_t>{});
            }
        }
    }
    return mem;
}

RestoreResult restore_verify(const std::vector<CheckpointImage>& chain,
                             const MemorySnapshot& oracle)
{
    const MemorySnapshot mem = restore(chain);
    RestoreResult r;
    for (const auto& [g, bytes] : oracle) {
        auto it = mem.find(g);
        if (it == mem.end() || it->second != bytes) {
            r.divergent.insert(g);
        }
    }
    for (const auto& [g, bytes] : mem) {
        if (!oracle.contains(g)) {
            r.divergent.insert(g);
        }
    }
    return r;
}

std::uint64_t image_hash(const CheckpointImage& img)
{
    std::uint64_t h = 14695981039346656037ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [g, bytes] : img.pages) {
        mix(&g.value, sizeof g.value);
        mix(bytes.data(), bytes.size());
    }
    return h;
}

void save_chain(const std::vector<CheckpointImage>& chain, const fs::path& dir)
{
    std::error_code ec;
    for (const auto& img : chain) {
        const fs::path root = dir / ("img-" + std::to_string(img.sequence_no));
        fs::create_directories(root / "pages", ec);
        if (ec) {
            throw IoError("cannot create " + root.string() + ": " + ec.message());
        }
        nlohmann::json m;
        m["sequence_no"] = img.sequence_no;
        m["mode"] = to_string(img.mode);
        m["parent"] = img.parent ? nlohmann::json(*img.parent) : nlohmann::json(nullptr);
        auto& pages = m["pages"] = nlohmann::json::array();
        for (const auto& [g, bytes] : img.pages) {
            pages.push_back(hex(g.value));
            std::ofstream f(root / "pages" / (hex(g.value) + ".page"), std::ios::binary);
            f.write(reinterpret_cast<const char*>(bytes.data()),
                    static_cast<std::streamsize>(bytes.size()));
            if (!f) {
                throw IoError("cannot write page " + hex(g.value) + " in " + root.string());
            }
        }
        auto& mapped = m["mapped"] = nlohmann::json::array();
        for (const Gva g : img.mapped) {
            mapped.push_back(g.value);
        }
        m["hash"] = hex(image_hash(img));
        std::ofstream f(root / "manifest.json");
        f << m.dump(2) << '\n';
        if (!f) {
            throw IoError("cannot write " + (root / "manifest.json").string());
        }
    }
}

std::vector<CheckpointImage> load_chain(const fs::path& dir)
{
    std::vector<CheckpointImage> chain;
    for (std::uint64_t seq = 0;; ++seq) {
        const fs::path root = dir / ("img-" + std::to_string(seq));
        if (!fs::exists(root / "manifest.json")) {
            break;
        }
        std::ifstream f(root / "manifest.json");
        nlohmann::json m;
        try {
            f >> m;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("bad manifest in " + root.string() + ": " + e.what());
        }
        CheckpointImage img;
        img.sequence_no = m.at("sequence_no").get<std::uint64_t>();
        img.mode = m.at("mode").get<std::string>() == "full" ? CheckpointMode::Full
                                                             : CheckpointMode::Incremental;
        if (!m.at("parent").is_null()) {
            img.parent = m["parent"].get<std::uint64_t>();
        }
        for (const auto& p : m.at("pages")) {
            const auto name = p.get<std::string>();
            std::ifstream pf(root / "pages" / (name + ".page"), std::ios::binary);
            if (!pf) {
                throw IoError("missing page file " + name + " in " + root.string());
            }
            std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(pf),
                                            std::istreambuf_iterator<char>()};
            img.pages.emplace(Gva{std::stoull(name, nullptr, 16)}, std::move(bytes));
        }
        for (const auto& g : m.at("mapped")) {
            img.mapped.emplace_back(g.get<std::uint64_t>());
        }
        if (m.at("hash").get<std::string>() != hex(image_hash(img))) {
            throw IoError("hash mismatch in " + root.string());
        }
        chain.push_back(std::move(img));
    }
    if (chain.empty()) {
        throw IoError("no checkpoint images under " + dir.string());
    }
    return chain;
}

std::vector<MissedPoint> missed_pages_experiment(const CostTable& costs,
                                                 const std::vector<std::uint64_t>& sizes,
                                                 const ChurnSpec& churn, Technique technique)
{
    std::vector<MissedPoint> out;
    for (const std::uint64_t bytes : sizes) {
        ChurnSpec spec = churn;
        spec.working_set_pages = pages_for(bytes, costs.page_size());
        Workload w = make_churn_workload(spec, costs.page_size());
        const ReplayOracle oracle = replay_dirty_set(w);
        SimulationConfig cfg;
        cfg.tracker = TrackerConfig::of(technique);
        Simulation sim(costs, cfg, std::move(w));
        const RunResult r = sim.run();

        MissedPoint p;
        p.working_set_bytes = bytes;
        p.dirty = oracle.dirty.size();
        for (const Gva g : oracle.dirty) {
            if (!r.report->dirty_set.contains(g)) {
                ++p.missed;
            }
        }
        p.proportion = p.dirty > 0 ? static_cast<double>(p.missed) / static_cast<double>(p.dirty) : 0;
        out.push_back(p);
    }
    return out;
}

double microbench_checkpoint_ms(const CostTable& costs, Technique technique, std::uint64_t bytes)
{
    Workload w = make_microbench(MicroBenchSpec{pages_for(bytes, costs.page_size()), 1},
                                 costs.page_size());
    w.ops.push_back(Op{OpKind::Checkpoint, Gva{0}, 0, 0});
    SimulationConfig cfg;
    cfg.tracker = TrackerConfig::of(technique);
    Simulation sim(costs, cfg, std::move(w));
    Checkpointer cp(sim);
    sim.run();
    if (cp.checkpoint_ms().empty()) {
        throw SimError("checkpoint did not run");
    }
    return cp.checkpoint_ms().back();
}

}  // namespace oohsim
