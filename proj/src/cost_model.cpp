#include "oohsim/cost_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace oohsim {

namespace {

constexpr std::uint64_t kMB = 1000ULL * 1000ULL;
constexpr std::uint64_t kGB = 1000ULL * kMB;

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

double parse_double(std::string_view s, std::string_view what)
{
    // std::from_chars for double is available in libstdc++ 11.
    double v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        throw CalibrationError("invalid number '" + std::string(s) + "' for " +
                               std::string(what));
    }
    return v;
}

struct NamedParam {
    std::string_view key;
    Micros TimingParams::*field;
};

constexpr NamedParam kParams[] = {
    {"page_write_us", &TimingParams::page_write_us},
    {"spml_vmexit_us", &TimingParams::spml_vmexit_us},
    {"hv_vmexit_us", &TimingParams::hv_vmexit_us},
    {"dump_us_per_page", &TimingParams::dump_us_per_page},
    {"checkpoint_fixed_us", &TimingParams::checkpoint_fixed_us},
    {"migration_send_us_per_page", &TimingParams::migration_send_us_per_page},
};

}  // namespace

std::string_view to_string(Technique t)
{
    switch (t) {
    case Technique::Proc: return "proc";
    case Technique::Userfaultfd: return "userfaultfd";
    case Technique::Spml: return "spml";
    case Technique::Epml: return "epml";
    }
    return "?";
}

Technique technique_from_string(std::string_view s)
{
    if (s == "proc" || s == "/proc") return Technique::Proc;
    if (s == "userfaultfd" || s == "uffd") return Technique::Userfaultfd;
    if (s == "spml") return Technique::Spml;
    if (s == "epml") return Technique::Epml;
    throw SimError("unknown technique '" + std::string(s) + "'");
}

std::string metric_name(Metric m)
{
    return "M" + std::to_string(static_cast<int>(m));
}

std::optional<Metric> metric_from_string(std::string_view s)
{
    if (s.size() < 2 || (s[0] != 'M' && s[0] != 'm')) {
        return std::nullopt;
    }
    int k = 0;
    auto [ptr, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), k);
    if (ec != std::errc{} || ptr != s.data() + s.size() || k < 1 || k > kMetricCount) {
        return std::nullopt;
    }
    return static_cast<Metric>(k);
}

std::string_view metric_description(Metric m)
{
    switch (m) {
    case Metric::M1: return "context switch user->kernel";
    case Metric::M2: return "ioctl write_protect";
    case Metric::M3: return "ioctl init PML";
    case Metric::M4: return "ioctl deactivate PML";
    case Metric::M5: return "page fault handling in kernel space";
    case Metric::M6: return "page fault handling in userspace";
    case Metric::M7: return "vmread";
    case Metric::M8: return "vmwrite";
    case Metric::M9: return "hypercall init PML";
    case Metric::M10: return "hypercall init PML + VMCS shadowing";
    case Metric::M11: return "hypercall PML deactivation";
    case Metric::M12: return "hypercall PML + VMCS shadowing deactivation";
    case Metric::M13: return "hypercall enable_logging";
    case Metric::M14: return "hypercall disable_logging";
    case Metric::M15: return "clear_refs (echo 4)";
    case Metric::M16: return "page table walk in userspace";
    case Metric::M17: return "reverse mapping";
    case Metric::M18: return "ring buffer copy";
    }
    return "?";
}

std::string charge_name(Charge c)
{
    const auto k = static_cast<int>(c);
    if (k >= 1 && k <= kMetricCount) {
        return "M" + std::to_string(k);
    }
    switch (c) {
    case Charge::VmExit: return "vmexit";
    case Charge::Dump: return "dump";
    case Charge::CheckpointFixed: return "checkpoint_fixed";
    case Charge::MigrationSend: return "migration_send";
    case Charge::RingWait: return "ring_wait";
    default: return "?";
    }
}

std::uint64_t parse_size(std::string_view s)
{
    s = trim(s);
    std::uint64_t unit = 1;
    std::string_view num = s;
    auto ends_with = [&](std::string_view suf) {
        return num.size() > suf.size() && num.substr(num.size() - suf.size()) == suf;
    };
    if (ends_with("GB")) {
        unit = kGB;
        num.remove_suffix(2);
    } else if (ends_with("MB")) {
        unit = kMB;
        num.remove_suffix(2);
    } else if (ends_with("KB")) {
        unit = 1000;
        num.remove_suffix(2);
    } else if (ends_with("B")) {
        num.remove_suffix(1);
    }
    const double v = parse_double(num, s);
    if (v <= 0) {
        throw CalibrationError("size must be positive: '" + std::string(s) + "'");
    }
    return static_cast<std::uint64_t>(std::llround(v * static_cast<double>(unit)));
}

std::string format_size(std::uint64_t bytes)
{
    if (bytes % kGB == 0) return std::to_string(bytes / kGB) + "GB";
    if (bytes % kMB == 0) return std::to_string(bytes / kMB) + "MB";
    return std::to_string(bytes);
}

const std::vector<std::uint64_t>& table_sizes()
{
    static const std::vector<std::uint64_t> sizes = {
        1 * kMB, 10 * kMB, 50 * kMB, 100 * kMB, 250 * kMB, 500 * kMB, 1 * kGB,
    };
    return sizes;
}

CostTable CostTable::defaults()
{
    CostTable t;
    auto fixed = [&](Metric m, Micros us) { t.fixed_[static_cast<int>(m)] = us; };
    fixed(Metric::M1, 0.315);
    // M2 has no published value; it is folded into M6 by default.
    fixed(Metric::M2, 0.0);
    fixed(Metric::M3, 5651);
    fixed(Metric::M4, 2816);
    fixed(Metric::M7, 0.936);
    fixed(Metric::M8, 0.801);
    fixed(Metric::M9, 5495);
    fixed(Metric::M10, 5878);
    fixed(Metric::M11, 2060);
    fixed(Metric::M12, 2755);
    fixed(Metric::M13, 0.3);

    auto sized = [&](Metric m, std::initializer_list<double> ms) {
        auto& list = t.sized_[static_cast<int>(m)];
        const auto& sizes = table_sizes();
        std::size_t i = 0;
        for (double v : ms) {
            list.push_back({sizes[i++], v});
        }
    };
    sized(Metric::M15, {0.032, 0.0912, 0.174, 0.288, 0.613, 1.153, 2.234});
    sized(Metric::M16, {1.912, 14.479, 41.832, 82.289, 161.973, 307.109, 594.187});
    sized(Metric::M5, {0.003, 0.3, 1.68, 3.34, 8.39, 16.79, 33.58});
    sized(Metric::M6, {2.5, 27.3, 152.3, 347.1, 882.8, 1585, 3483});
    sized(Metric::M14, {0.042, 0.047, 0.138, 0.156, 0.189, 0.203, 0.208});
    sized(Metric::M18, {0.003, 0.01, 0.03, 0.048, 0.109, 0.383, 0.671});
    sized(Metric::M17, {6.183, 24.653, 85.117, 255.437, 1211, 4123, 15738});
    return t;
}

CostTable CostTable::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw CalibrationError("cannot open calibration file " + path.string());
    }
    CostTable t = defaults();
    t.apply(in, path.string());
    return t;
}

void CostTable::apply(std::istream& in, std::string_view origin)
{
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v = line;
        if (auto hash = v.find('#'); hash != std::string_view::npos) {
            v = v.substr(0, hash);
        }
        v = trim(v);
        if (v.empty()) {
            continue;
        }
        const auto eq = v.find('=');
        if (eq == std::string_view::npos) {
            throw CalibrationError(std::string(origin) + ":" + std::to_string(lineno) +
                                   ": expected 'key = value'");
        }
        const auto key = trim(v.substr(0, eq));
        const auto val = trim(v.substr(eq + 1));
        try {
            set(key, parse_double(val, key));
        } catch (const CalibrationError& e) {
            throw CalibrationError(std::string(origin) + ":" + std::to_string(lineno) +
                                   ": " + e.what());
        }
    }
}

void CostTable::set(std::string_view key, double value)
{
    if (value < 0) {
        throw CalibrationError("negative cost for " + std::string(key));
    }
    if (key == "page_size") {
        if (value < 1) throw CalibrationError("page_size must be >= 1");
        page_size_ = static_cast<std::size_t>(value);
        return;
    }
    for (const auto& p : kParams) {
        if (p.key == key) {
            timing_.*(p.field) = value;
            return;
        }
    }
    const auto at = key.find('@');
    const auto metric = metric_from_string(trim(key.substr(0, at)));
    if (!metric) {
        throw CalibrationError("unknown calibration key '" + std::string(key) + "'");
    }
    const int k = static_cast<int>(*metric);
    if (at == std::string_view::npos) {
        if (!sized_[k].empty()) {
            throw CalibrationError(std::string(key) +
                                   " is memory-dependent; use " + std::string(key) + "@<size>");
        }
        fixed_[k] = value;
        return;
    }
    const auto bytes = parse_size(key.substr(at + 1));
    auto& list = sized_[k];
    auto it = std::lower_bound(list.begin(), list.end(), bytes,
                               [](const SizeAnchor& a, std::uint64_t b) { return a.bytes < b; });
    if (it != list.end() && it->bytes == bytes) {
        it->ms = value;
    } else {
        list.insert(it, SizeAnchor{bytes, value});
    }
    fixed_[k].reset();
}

bool CostTable::is_sized(Metric m) const
{
    return !sized_[static_cast<int>(m)].empty();
}

const std::vector<SizeAnchor>& CostTable::anchors(Metric m) const
{
    return sized_[static_cast<int>(m)];
}

Micros CostTable::fixed(Metric m) const
{
    const auto& f = fixed_[static_cast<int>(m)];
    if (!f) {
        throw UnknownMetric(metric_name(m) + " has no memory-independent value");
    }
    return *f;
}

Micros CostTable::cost_of(Metric m, std::uint64_t memory_bytes) const
{
    const int k = static_cast<int>(m);
    if (k < 1 || k > kMetricCount) {
        throw UnknownMetric("unknown metric id " + std::to_string(k));
    }
    const auto& list = sized_[k];
    if (list.empty()) {
        return fixed(m);
    }
    if (list.size() == 1 || memory_bytes <= list.front().bytes) {
        return ms_to_us(list.front().ms);
    }
    // Segment containing memory_bytes, or the last one for extrapolation.
    std::size_t hi = 1;
    while (hi + 1 < list.size() && list[hi].bytes < memory_bytes) {
        ++hi;
    }
    const auto& a = list[hi - 1];
    const auto& b = list[hi];
    const double x = static_cast<double>(memory_bytes);
    const double x0 = static_cast<double>(a.bytes);
    const double x1 = static_cast<double>(b.bytes);
    const double ms = a.ms + (b.ms - a.ms) * (x - x0) / (x1 - x0);
    return ms_to_us(std::max(ms, 0.0));
}

Micros CostTable::per_page(Metric m, std::uint64_t memory_bytes) const
{
    if (memory_bytes == 0) {
        return 0;
    }
    const double pages = static_cast<double>(memory_bytes) / static_cast<double>(page_size_);
    return cost_of(m, memory_bytes) / pages;
}

void CostTable::write(std::ostream& out) const
{
    out << std::setprecision(12);
    out << "# fixed metrics: microseconds\n";
    for (int k = 1; k <= kMetricCount; ++k) {
        if (fixed_[k]) {
            out << "M" << k << " = " << *fixed_[k] << "\n";
        }
    }
    out << "# memory-dependent metrics: milliseconds at a memory size\n";
    for (int k = 1; k <= kMetricCount; ++k) {
        for (const auto& a : sized_[k]) {
            out << "M" << k << "@" << format_size(a.bytes) << " = " << a.ms << "\n";
        }
    }
    out << "# timing model scalars\n";
    for (const auto& p : kParams) {
        out << p.key << " = " << timing_.*(p.field) << "\n";
    }
    out << "page_size = " << page_size_ << "\n";
}

void CostLedger::charge(Entity e, Charge c, Micros us)
{
    us_[static_cast<int>(e)][static_cast<int>(c)] += us;
}

Micros CostLedger::get(Entity e, Charge c) const
{
    return us_[static_cast<int>(e)][static_cast<int>(c)];
}

Micros CostLedger::total(Entity e) const
{
    Micros sum = 0;
    for (Micros v : us_[static_cast<int>(e)]) {
        sum += v;
    }
    return sum;
}

EpmlEstimate estimate_epml(Micros p_vanilla, std::uint64_t n, const CostTable& table,
                           std::uint64_t memory_bytes)
{
    EpmlEstimate e;
    e.p_vanilla = p_vanilla;
    e.n_events = n;
    e.c_vmread = table.cost_of(Metric::M7, memory_bytes);
    e.c_vmwrite = table.cost_of(Metric::M8, memory_bytes);
    e.c_copyrb = table.cost_of(Metric::M18, memory_bytes);
    e.p_epml = e.p_vanilla + static_cast<double>(e.n_events) * (3 * e.c_vmwrite + e.c_vmread) +
               e.c_copyrb;
    return e;
}

double overhead_pct(Micros tracked, Micros ideal)
{
    if (!(ideal > 0)) {
        throw SimError("overhead requires a positive ideal time");
    }
    return 100.0 * (tracked / ideal - 1.0);
}

}  // namespace oohsim
