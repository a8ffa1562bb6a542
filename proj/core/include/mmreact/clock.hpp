#pragma once

#include <atomic>
#include <cstdint>

namespace mmreact {

// Monotonic time source in nanoseconds. Message timestamps and expert
// durations come from here, never from the wall clock.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::uint64_t now_ns() = 0;
};

class SteadyClock final : public Clock {
 public:
  std::uint64_t now_ns() override;
};

// Advances by a fixed tick on every read. Used for reproducible traces.
class LogicalClock final : public Clock {
 public:
  explicit LogicalClock(std::uint64_t tick_ns = 1'000'000) : tick_(tick_ns) {}
  std::uint64_t now_ns() override { return now_.fetch_add(tick_) + tick_; }

 private:
  std::uint64_t tick_;
  std::atomic<std::uint64_t> now_{0};
};

}  // namespace mmreact
