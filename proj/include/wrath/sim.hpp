#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

namespace wrath::vcluster {

// Deterministic virtual-time event loop. All runtime contexts (manager,
// node managers, workers, monitoring agents, detector) are driven by this
// loop; ties at the same virtual instant are broken by posting order, so a
// run's event sequence is a pure function of its inputs.
class EventLoop {
 public:
  using Handler = std::function<void()>;

  std::int64_t now_us() const { return now_us_; }
  double now_ms() const { return static_cast<double>(now_us_) / 1000.0; }

  // Schedules `fn` at now + delay_us (clamped to now for negative delays).
  void post(std::int64_t delay_us, Handler fn) {
    if (delay_us < 0) delay_us = 0;
    queue_.push(Entry{now_us_ + delay_us, next_seq_++, std::move(fn)});
  }

  void post_at(std::int64_t at_us, Handler fn) {
    post(at_us - now_us_, std::move(fn));
  }

  bool empty() const { return queue_.empty(); }

  // Runs one event; returns false when the queue is empty.
  bool step() {
    if (queue_.empty()) return false;
    Entry e = queue_.top();
    queue_.pop();
    now_us_ = e.at_us;
    e.fn();
    return true;
  }

  void run_until_idle(std::uint64_t max_events = 50'000'000) {
    std::uint64_t n = 0;
    while (step()) {
      if (++n >= max_events) throw std::runtime_error("EventLoop: event budget exceeded");
    }
  }

 private:
  struct Entry {
    std::int64_t at_us;
    std::uint64_t seq;
    Handler fn;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.at_us != b.at_us) return a.at_us > b.at_us;
      return a.seq > b.seq;
    }
  };

  std::int64_t now_us_ = 0;
  std::uint64_t next_seq_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, Later> queue_;
};

}  // namespace wrath::vcluster
