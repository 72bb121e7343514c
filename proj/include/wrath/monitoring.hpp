#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "wrath/common.hpp"
#include "wrath/failure.hpp"

namespace wrath::vcluster {
struct NodeState;
}

namespace wrath::monitoring {

enum class EventKind : std::uint8_t {
  ResourceSample,
  Heartbeat,
  StateTransition,
  LogRecord,
  FailureReportEvent,
};

const char* to_string(EventKind k);
EventKind event_kind_from_string(const std::string& s);

// The one envelope the radio carries. `ts_ms` is virtual time (deterministic,
// non-decreasing per source); `wall_ns` is informational wall clock and is
// excluded from determinism comparisons. (run_id, source, seq) is the
// exactly-once key.
struct EventRecord {
  std::string run_id;
  EventKind kind = EventKind::LogRecord;
  std::string source;
  double ts_ms = 0.0;
  std::uint64_t seq = 0;
  std::int64_t wall_ns = 0;
  json body = json::object();

  json to_json() const;
  static EventRecord from_json(const json& j);
};

struct ResourceSample {
  std::string node_id;
  std::optional<std::string> task_id;
  double cpu_pct = 0.0;
  int memory_in_use_units = 0;
  int memory_capacity_units = 0;
  int open_files = 0;

  json to_json() const;
};

// Snapshot of a node's accounting counters. Emitted over the radio by the
// per-node task monitoring agent.
ResourceSample sample_node(const vcluster::NodeState& node);

struct HistoryCounters {
  int successes = 0;
  int failures = 0;
  bool operator==(const HistoryCounters&) const = default;
};

using PlacementKey = std::pair<std::string, std::string>;  // (pool_id, node_id)

// Centralized monitoring store: append-only event log plus indexes, a
// last-heartbeat table, and per-(task_kind, pool, node) outcome counters.
// Appends are serialized; indexes can always be rebuilt by rescanning.
class MonitoringStore {
 public:
  // Returns false for duplicate (run_id, source, seq) keys.
  bool append(const EventRecord& ev);

  std::vector<EventRecord> events() const;
  std::size_t size() const;
  std::vector<EventRecord> by_source(const std::string& source) const;
  std::vector<EventRecord> by_kind(EventKind kind) const;
  std::vector<EventRecord> by_task(const std::string& task_id) const;
  // Events with source == node and ts in [from_ms, to_ms], any kind.
  std::vector<EventRecord> window(const std::string& source, double from_ms, double to_ms) const;

  std::optional<double> last_heartbeat_ms(const std::string& component) const;
  std::map<std::string, double> heartbeat_table() const;

  // Current-run counters for one task kind (seeded history included).
  std::map<PlacementKey, HistoryCounters> history(const std::string& task_kind) const;
  // Prior-run counters loaded from a history file.
  void seed_history(const std::string& task_kind, const PlacementKey& where,
                    const HistoryCounters& counts);

  // Recomputes counters/indexes from the raw log; used to check consistency.
  std::map<std::string, std::map<PlacementKey, HistoryCounters>> recount_history() const;
  bool indexes_consistent() const;

  void set_jsonl_sink(const std::string& path);
  void close_sink();

 private:
  void index_locked(std::size_t i);

  mutable std::mutex mu_;
  std::vector<EventRecord> log_;
  std::set<std::tuple<std::string, std::string, std::uint64_t>> keys_;
  std::map<std::string, std::vector<std::size_t>> by_source_;
  std::map<int, std::vector<std::size_t>> by_kind_;
  std::map<std::string, std::vector<std::size_t>> by_task_;
  std::map<std::string, double> last_hb_;
  std::map<std::string, std::map<PlacementKey, HistoryCounters>> counters_;
  std::map<std::string, std::map<PlacementKey, HistoryCounters>> seeded_;
  std::unique_ptr<std::ofstream> sink_;
};

// Transport between agents and the store. Implementations: in-process link
// (default), TCP frame client (radio_tcp.hpp).
class RadioLink {
 public:
  virtual ~RadioLink() = default;
  virtual bool send(const EventRecord& ev) = 0;  // true = acked
};

class InProcLink : public RadioLink {
 public:
  explicit InProcLink(MonitoringStore& store) : store_(&store) {}
  bool send(const EventRecord& ev) override {
    if (!up) return false;
    store_->append(ev);
    return true;
  }
  bool up = true;  // tests toggle to simulate outages

 private:
  MonitoringStore* store_;
};

// Agent-side sender: buffers while the link is unreachable and retries in
// order on reconnect. Overflow drops oldest LogRecords first, then samples,
// then transitions; Heartbeats and FailureReports are never dropped.
class RadioAgent {
 public:
  explicit RadioAgent(RadioLink& link, std::size_t buffer_capacity = 1000)
      : link_(&link), capacity_(buffer_capacity) {}

  // Returns true if the event was delivered (possibly after flushing).
  bool send(const EventRecord& ev);
  std::size_t buffered() const { return buffer_.size(); }
  std::size_t dropped() const { return dropped_; }

 private:
  bool flush();
  RadioLink* link_;
  std::size_t capacity_;
  std::deque<EventRecord> buffer_;
  std::size_t dropped_ = 0;
};

struct DetectorEvent {
  enum Kind { Suspected, Recovered } kind;
  std::string component;
  double at_ms = 0.0;
  double silent_ms = 0.0;
};

// Stateless rule: components whose last heartbeat is older than
// miss_threshold * interval_ms at `now_ms`.
std::vector<std::string> overdue_components(const MonitoringStore& store, double now_ms,
                                            int interval_ms, int miss_threshold);

// Stateful detector: emits each suspicion once, and Recovered when a
// suspected component heartbeats again. Sequence gaps alone never suspect.
class HeartbeatDetector {
 public:
  HeartbeatDetector(int interval_ms, int miss_threshold)
      : interval_ms_(interval_ms), miss_threshold_(miss_threshold) {
    if (interval_ms <= 0) throw ConfigError("heartbeat interval_ms must be > 0");
    if (miss_threshold < 1) throw ConfigError("miss_threshold must be >= 1");
  }

  std::vector<DetectorEvent> detect(const MonitoringStore& store, double now_ms);
  bool is_suspected(const std::string& component) const { return suspected_.count(component) != 0; }

 private:
  int interval_ms_;
  int miss_threshold_;
  std::set<std::string> suspected_;
};

// Aggregated per-placement outcome counters for a task kind.
std::map<PlacementKey, HistoryCounters> task_history(const MonitoringStore& store,
                                                     const std::string& task_kind);

}  // namespace wrath::monitoring
