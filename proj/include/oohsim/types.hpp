#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace oohsim {

// Strong page-number types. All addresses in the simulator are page
// granular; the byte offset inside a page never matters for tracking.
template <typename Tag>
struct PageNumber {
    std::uint64_t value = 0;

    constexpr PageNumber() = default;
    constexpr explicit PageNumber(std::uint64_t v) : value(v) {}

    constexpr auto operator<=>(const PageNumber&) const = default;
};

struct GvaTag {};
struct GpaTag {};
struct HpaTag {};

using Gva = PageNumber<GvaTag>;
using Gpa = PageNumber<GpaTag>;
using Hpa = PageNumber<HpaTag>;

using Pid = std::uint32_t;
using VcpuId = std::uint32_t;

/// Virtual time and costs, in microseconds.
using Micros = double;

inline constexpr std::size_t kDefaultPageSize = 4096;

inline constexpr Micros ms_to_us(double ms) { return ms * 1000.0; }

enum class Technique { Proc, Userfaultfd, Spml, Epml };

std::string_view to_string(Technique t);
Technique technique_from_string(std::string_view s);

/// Base for every error the simulator raises on contract violations.
class SimError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure while reading or writing artifacts.
class IoError : public SimError {
public:
    using SimError::SimError;
};

}  // namespace oohsim

template <typename Tag>
struct std::hash<oohsim::PageNumber<Tag>> {
    std::size_t operator()(const oohsim::PageNumber<Tag>& p) const noexcept
    {
        return std::hash<std::uint64_t>{}(p.value);
    }
};
