#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <queue>
#include <string_view>
#include <vector>

#include "oohsim/types.hpp"

namespace oohsim {

enum class EventKind : std::uint8_t {
    Write,
    PageFault,
    Schedule,
    Hypercall,
    VmExit,
    SelfIpi,
    Softirq,
    RingDrain,
    CheckpointTick,
    MigrationRound,
};

inline constexpr std::size_t kEventKindCount = 10;

std::string_view to_string(EventKind k);

struct Event {
    Micros time = 0;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::Write;
    std::function<void()> action;
};

/// Discrete-event queue ordered by (time, seq); seq is assigned at insertion.
class EventQueue {
public:
    std::uint64_t push(Micros time, EventKind kind, std::function<void()> action);

    bool empty() const { return heap_.empty(); }
    std::size_t size() const { return heap_.size(); }
    Micros next_time() const;

    /// Pop and run the next event. Returns false when the queue is empty.
    bool step();
    /// Run until empty or until the next event is later than `until`.
    void run(Micros until);

    Micros now() const { return now_; }
    std::uint64_t executed() const { return executed_; }
    std::uint64_t executed(EventKind k) const { return by_kind_[static_cast<std::size_t>(k)]; }
    /// Record an event handled inline (no queue round trip).
    void note(EventKind k);

private:
    struct Later {
        bool operator()(const Event& a, const Event& b) const
        {
            if (a.time != b.time) {
                return a.time > b.time;
            }
            return a.seq > b.seq;
        }
    };

    std::priority_queue<Event, std::vector<Event>, Later> heap_;
    Micros now_ = 0;
    std::uint64_t next_seq_ = 0;
    std::uint64_t last_seq_ = 0;
    std::uint64_t executed_ = 0;
    std::array<std::uint64_t, kEventKindCount> by_kind_{};
};

}  // namespace oohsim
