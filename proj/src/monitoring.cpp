#include "wrath/monitoring.hpp"

#include <algorithm>

#include "wrath/vcluster.hpp"

namespace wrath::monitoring {

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::ResourceSample: return "resource_sample";
    case EventKind::Heartbeat: return "heartbeat";
    case EventKind::StateTransition: return "state_transition";
    case EventKind::LogRecord: return "log_record";
    case EventKind::FailureReportEvent: return "failure_report";
  }
  return "?";
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "resource_sample") return EventKind::ResourceSample;
  if (s == "heartbeat") return EventKind::Heartbeat;
  if (s == "state_transition") return EventKind::StateTransition;
  if (s == "log_record") return EventKind::LogRecord;
  if (s == "failure_report") return EventKind::FailureReportEvent;
  throw ConfigError("unknown event kind: " + s);
}

json EventRecord::to_json() const {
  return json{{"run_id", run_id}, {"kind", to_string(kind)}, {"source", source},
              {"ts", ts_ms},      {"seq", seq},              {"wall_ns", wall_ns},
              {"body", body}};
}

EventRecord EventRecord::from_json(const json& j) {
  EventRecord ev;
  ev.run_id = j.at("run_id").get<std::string>();
  ev.kind = event_kind_from_string(j.at("kind").get<std::string>());
  ev.source = j.at("source").get<std::string>();
  ev.ts_ms = j.at("ts").get<double>();
  ev.seq = j.value("seq", std::uint64_t{0});
  ev.wall_ns = j.value("wall_ns", std::int64_t{0});
  ev.body = j.value("body", json::object());
  return ev;
}

json ResourceSample::to_json() const {
  json j{{"node_id", node_id},
         {"cpu_pct", cpu_pct},
         {"memory_in_use_units", memory_in_use_units},
         {"memory_capacity_units", memory_capacity_units},
         {"open_files", open_files}};
  if (task_id) j["task_id"] = *task_id;
  return j;
}

ResourceSample sample_node(const vcluster::NodeState& node) {
  ResourceSample s;
  s.node_id = node.config.node_id;
  s.memory_in_use_units = node.memory_in_use_units;
  s.memory_capacity_units = node.config.memory_capacity_units;
  s.open_files = node.open_files;
  int workers = node.worker_count > 0 ? node.worker_count : 1;
  s.cpu_pct = 100.0 * static_cast<double>(node.running.size()) / workers;
  if (s.cpu_pct > 100.0) s.cpu_pct = 100.0;
  return s;
}

bool MonitoringStore::append(const EventRecord& ev) {
  std::lock_guard<std::mutex> lock(mu_);
  auto key = std::make_tuple(ev.run_id, ev.source, ev.seq);
  if (!keys_.insert(key).second) return false;  // duplicate resend
  log_.push_back(ev);
  index_locked(log_.size() - 1);
  if (sink_) *sink_ << ev.to_json().dump() << '\n' << std::flush;
  return true;
}

void MonitoringStore::index_locked(std::size_t i) {
  const EventRecord& ev = log_[i];
  by_source_[ev.source].push_back(i);
  by_kind_[static_cast<int>(ev.kind)].push_back(i);
  if (ev.body.contains("task_id")) by_task_[ev.body["task_id"].get<std::string>()].push_back(i);
  if (ev.kind == EventKind::Heartbeat) {
    auto it = last_hb_.find(ev.source);
    if (it == last_hb_.end() || it->second < ev.ts_ms) last_hb_[ev.source] = ev.ts_ms;
  }
  if (ev.kind == EventKind::StateTransition) {
    const json& b = ev.body;
    std::string to = b.value("to", "");
    if ((to == "Succeeded" || to == "Failed") && b.contains("pool_id") && b.contains("node_id")) {
      auto& c = counters_[b.value("kind", "task")]
                         [{b["pool_id"].get<std::string>(), b["node_id"].get<std::string>()}];
      if (to == "Succeeded")
        c.successes += 1;
      else
        c.failures += 1;
    }
  }
}

std::vector<EventRecord> MonitoringStore::events() const {
  std::lock_guard<std::mutex> lock(mu_);
  return log_;
}

std::size_t MonitoringStore::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return log_.size();
}

std::vector<EventRecord> MonitoringStore::by_source(const std::string& source) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<EventRecord> out;
  auto it = by_source_.find(source);
  if (it != by_source_.end())
    for (auto i : it->second) out.push_back(log_[i]);
  return out;
}

std::vector<EventRecord> MonitoringStore::by_kind(EventKind kind) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<EventRecord> out;
  auto it = by_kind_.find(static_cast<int>(kind));
  if (it != by_kind_.end())
    for (auto i : it->second) out.push_back(log_[i]);
  return out;
}

std::vector<EventRecord> MonitoringStore::by_task(const std::string& task_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<EventRecord> out;
  auto it = by_task_.find(task_id);
  if (it != by_task_.end())
    for (auto i : it->second) out.push_back(log_[i]);
  return out;
}

std::vector<EventRecord> MonitoringStore::window(const std::string& source, double from_ms,
                                                 double to_ms) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<EventRecord> out;
  auto it = by_source_.find(source);
  if (it != by_source_.end())
    for (auto i : it->second) {
      const auto& ev = log_[i];
      if (ev.ts_ms >= from_ms && ev.ts_ms <= to_ms) out.push_back(ev);
    }
  return out;
}

std::optional<double> MonitoringStore::last_heartbeat_ms(const std::string& component) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = last_hb_.find(component);
  if (it == last_hb_.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, double> MonitoringStore::heartbeat_table() const {
  std::lock_guard<std::mutex> lock(mu_);
  return last_hb_;
}

std::map<PlacementKey, HistoryCounters> MonitoringStore::history(
    const std::string& task_kind) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::map<PlacementKey, HistoryCounters> out;
  auto seed = seeded_.find(task_kind);
  if (seed != seeded_.end()) out = seed->second;
  auto it = counters_.find(task_kind);
  if (it != counters_.end())
    for (const auto& [key, c] : it->second) {
      out[key].successes += c.successes;
      out[key].failures += c.failures;
    }
  return out;
}

void MonitoringStore::seed_history(const std::string& task_kind, const PlacementKey& where,
                                   const HistoryCounters& counts) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& c = seeded_[task_kind][where];
  c.successes += counts.successes;
  c.failures += counts.failures;
}

std::map<std::string, std::map<PlacementKey, HistoryCounters>> MonitoringStore::recount_history()
    const {
  std::lock_guard<std::mutex> lock(mu_);
  std::map<std::string, std::map<PlacementKey, HistoryCounters>> out;
  for (const auto& ev : log_) {
    if (ev.kind != EventKind::StateTransition) continue;
    const json& b = ev.body;
    std::string to = b.value("to", "");
    if ((to != "Succeeded" && to != "Failed") || !b.contains("pool_id") || !b.contains("node_id"))
      continue;
    auto& c = out[b.value("kind", "task")]
                 [{b["pool_id"].get<std::string>(), b["node_id"].get<std::string>()}];
    if (to == "Succeeded")
      c.successes += 1;
    else
      c.failures += 1;
  }
  return out;
}

bool MonitoringStore::indexes_consistent() const {
  auto recount = recount_history();
  std::lock_guard<std::mutex> lock(mu_);
  if (recount != counters_) return false;
  std::size_t indexed = 0;
  for (const auto& [src, v] : by_source_) indexed += v.size();
  if (indexed != log_.size()) return false;
  std::map<std::string, double> hb;
  for (const auto& ev : log_)
    if (ev.kind == EventKind::Heartbeat) {
      auto it = hb.find(ev.source);
      if (it == hb.end() || it->second < ev.ts_ms) hb[ev.source] = ev.ts_ms;
    }
  return hb == last_hb_;
}

void MonitoringStore::set_jsonl_sink(const std::string& path) {
  std::lock_guard<std::mutex> lock(mu_);
  sink_ = std::make_unique<std::ofstream>(path, std::ios::trunc);
  if (!*sink_) throw ConfigError("cannot open event log sink: " + path);
  for (const auto& ev : log_) *sink_ << ev.to_json().dump() << '\n';
  sink_->flush();
}

void MonitoringStore::close_sink() {
  std::lock_guard<std::mutex> lock(mu_);
  sink_.reset();
}

bool RadioAgent::flush() {
  while (!buffer_.empty()) {
    if (!link_->send(buffer_.front())) return false;
    buffer_.pop_front();
  }
  return true;
}

bool RadioAgent::send(const EventRecord& ev) {
  if (flush() && link_->send(ev)) return true;
  // Link unreachable: enqueue, evicting by kind priority when full.
  if (buffer_.size() >= capacity_) {
    auto droppable = [&](EventKind k) {
      for (auto it = buffer_.begin(); it != buffer_.end(); ++it)
        if (it->kind == k) {
          buffer_.erase(it);
          ++dropped_;
          return true;
        }
      return false;
    };
    if (!droppable(EventKind::LogRecord) && !droppable(EventKind::ResourceSample) &&
        !droppable(EventKind::StateTransition)) {
      ++dropped_;  // nothing droppable: reject the incoming event instead
      if (ev.kind == EventKind::LogRecord || ev.kind == EventKind::ResourceSample ||
          ev.kind == EventKind::StateTransition)
        return false;
    }
  }
  if (buffer_.size() < capacity_) buffer_.push_back(ev);
  return false;
}

std::vector<std::string> overdue_components(const MonitoringStore& store, double now_ms,
                                            int interval_ms, int miss_threshold) {
  std::vector<std::string> out;
  double horizon = static_cast<double>(interval_ms) * miss_threshold;
  for (const auto& [component, last] : store.heartbeat_table())
    if (now_ms - last > horizon) out.push_back(component);
  return out;
}

std::vector<DetectorEvent> HeartbeatDetector::detect(const MonitoringStore& store, double now_ms) {
  std::vector<DetectorEvent> out;
  auto table = store.heartbeat_table();
  double horizon = static_cast<double>(interval_ms_) * miss_threshold_;
  for (const auto& [component, last] : table) {
    bool overdue = now_ms - last > horizon;
    bool was = suspected_.count(component) != 0;
    if (overdue && !was) {
      suspected_.insert(component);
      out.push_back({DetectorEvent::Suspected, component, now_ms, now_ms - last});
    } else if (!overdue && was) {
      suspected_.erase(component);
      out.push_back({DetectorEvent::Recovered, component, now_ms, now_ms - last});
    }
  }
  return out;
}

std::map<PlacementKey, HistoryCounters> task_history(const MonitoringStore& store,
                                                     const std::string& task_kind) {
  return store.history(task_kind);
}

}  // namespace wrath::monitoring
