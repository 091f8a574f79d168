#include "oohsim/event_queue.hpp"

#include <string>

namespace oohsim {

std::string_view to_string(EventKind k)
{
    switch (k) {
    case EventKind::Write: return "write";
    case EventKind::PageFault: return "page_fault";
    case EventKind::Schedule: return "schedule";
    case EventKind::Hypercall: return "hypercall";
    case EventKind::VmExit: return "vmexit";
    case EventKind::SelfIpi: return "self_ipi";
    case EventKind::Softirq: return "softirq";
    case EventKind::RingDrain: return "ring_drain";
    case EventKind::CheckpointTick: return "checkpoint_tick";
    case EventKind::MigrationRound: return "migration_round";
    }
    return "?";
}

std::uint64_t EventQueue::push(Micros time, EventKind kind, std::function<void()> action)
{
    if (time < now_) {
        throw SimError("event scheduled in the past: " + std::to_string(time) + " < " +
                       std::to_string(now_));
    }
    const std::uint64_t seq = next_seq_++;
    heap_.push(Event{time, seq, kind, std::move(action)});
    return seq;
}

Micros EventQueue::next_time() const
{
    if (heap_.empty()) {
        throw SimError("next_time on empty event queue");
    }
    return heap_.top().time;
}

bool EventQueue::step()
{
    if (heap_.empty()) {
        return false;
    }
    Event e = heap_.top();
    heap_.pop();
    if (e.time < now_ || (e.time == now_ && executed_ > 0 && e.seq < last_seq_)) {
        throw SimError("event executed out of (time, seq) order");
    }
    now_ = e.time;
    last_seq_ = e.seq;
    ++executed_;
    ++by_kind_[static_cast<std::size_t>(e.kind)];
    if (e.action) {
        e.action();
    }
    return true;
}

void EventQueue::run(Micros until)
{
    while (!heap_.empty() && heap_.top().time <= until) {
        step();
    }
}

void EventQueue::note(EventKind k)
{
    ++executed_;
    ++by_kind_[static_cast<std::size_t>(k)];
}

}  // namespace oohsim
