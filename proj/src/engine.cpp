#include "wrath/engine.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

namespace wrath::vcluster {

namespace {

constexpr int kReservationFailMs = 2;
constexpr int kImportFailMs = 2;
constexpr int kUlimitFailMs = 5;

std::int64_t wall_now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string worker_component(const std::string& node_id, int worker) {
  return "worker:" + node_id + ":" + std::to_string(worker);
}

}  // namespace

std::vector<PlacementAssignment> schedule(const ClusterView& view,
                                          const std::vector<std::string>& ready,
                                          const std::optional<resilience::Placement>& hint,
                                          const std::string& pool) {
  std::vector<PlacementAssignment> out;
  if (hint) {
    const NodeView* n = view.find(hint->node_id);
    if (!n || !n->alive || n->denylisted)
      throw ConfigError("placement hint references unavailable node: " + hint->node_id);
    for (const auto& t : ready) out.push_back({t, hint->pool_id, hint->node_id});
    return out;
  }
  std::map<std::string, int> free;
  for (const auto& n : view.nodes)
    if (n.pool_id == pool && n.alive && !n.denylisted) free[n.node_id] = n.free_worker_slots;
  for (const auto& t : ready) {
    const std::string* best = nullptr;
    int best_slots = 0;
    for (const auto& [id, slots] : free)
      if (slots > best_slots) {  // ties resolved by map order (lowest node_id)
        best = &id;
        best_slots = slots;
      }
    if (!best) break;  // no capacity: remaining tasks stay queued
    out.push_back({t, pool, *best});
    --free[*best];
  }
  return out;
}

Runtime::Runtime(ClusterTopology topo, RuntimeConfig cfg, monitoring::MonitoringStore& store,
                 monitoring::RadioLink* link, TaskRegistry* registry)
    : topo_(std::move(topo)),
      cfg_(std::move(cfg)),
      store_(&store),
      own_link_(link ? nullptr : std::make_unique<monitoring::InProcLink>(store)),
      agent_(link ? *link : *own_link_, 100'000),
      registry_(registry ? registry : &TaskRegistry::builtin()),
      resilience_(cfg_.policy, cfg_.rules),
      detector_(cfg_.policy.heartbeat_interval_ms, cfg_.policy.miss_threshold),
      run_rng_(cfg_.seed) {
  topo_.validate();
  if (topo_.default_pool.empty()) topo_.default_pool = topo_.pools.front().pool_id;
}

Runtime::~Runtime() = default;

Runtime::Node* Runtime::find_node(const std::string& node_id) {
  auto it = nodes_.find(node_id);
  return it == nodes_.end() ? nullptr : &it->second;
}

const Runtime::Node* Runtime::find_node(const std::string& node_id) const {
  auto it = nodes_.find(node_id);
  return it == nodes_.end() ? nullptr : &it->second;
}

void Runtime::emit(const std::string& source, monitoring::EventKind kind, json body) {
  monitoring::EventRecord ev;
  ev.run_id = cfg_.run_id;
  ev.kind = kind;
  ev.source = source;
  ev.ts_ms = loop_.now_ms();
  ev.seq = ++seq_[source];
  ev.wall_ns = wall_now_ns();
  ev.body = std::move(body);
  agent_.send(ev);
}

ClusterView Runtime::view() const {
  ClusterView v;
  v.default_pool = topo_.default_pool;
  for (const auto& id : node_order_) {
    const Node& n = nodes_.at(id);
    NodeView nv;
    nv.pool_id = n.st.pool_id;
    nv.node_id = id;
    nv.alive = n.st.alive();
    nv.denylisted = n.st.denylisted;
    nv.worker_slots = static_cast<int>(n.workers.size());
    for (const auto& w : n.workers)
      if (w.state == WorkerSlot::State::Free) ++nv.free_worker_slots;
    nv.free_memory_units = n.st.free_memory_units();
    nv.memory_capacity_units = n.st.config.memory_capacity_units;
    nv.file_handle_limit = n.st.config.file_handle_limit;
    nv.installed_packages = n.st.config.installed_packages;
    v.nodes.push_back(std::move(nv));
  }
  return v;
}

ProvisionResult Runtime::provision() {
  ProvisionResult result;
  for (const auto& pool : topo_.pools) {
    int live_in_pool = 0;
    for (const auto& nc : pool.nodes) {
      Node n;
      n.st.config = nc;
      n.st.pool_id = pool.pool_id;
      n.st.worker_count = pool.workers_per_node;
      if (nc.init_failure) {
        n.st.liveness = Liveness::Unprovisioned;
        result.failed_nodes.push_back(nc.node_id);
        resilience::FailureReport rep;
        rep.source = "node:" + nc.node_id;
        rep.kind = resilience::ManifestationKind::ExceptionText;
        rep.exception_text =
            "PilotInitError: pilot job failed to initialize on node '" + nc.node_id + "'";
        rep.timestamp_us = loop_.now_us();
        emit(rep.source, monitoring::EventKind::FailureReportEvent, rep.to_json());
      } else {
        n.st.liveness = Liveness::Alive;
        n.workers.resize(pool.workers_per_node);
        n.provisioned = true;
        ++live_in_pool;
        result.live_nodes.push_back(nc.node_id);
      }
      node_order_.push_back(nc.node_id);
      nodes_.emplace(nc.node_id, std::move(n));
      if (!nc.init_failure) {
        emit("manager", monitoring::EventKind::LogRecord,
             json{{"event", "register"},
                  {"component", "node:" + nc.node_id},
                  {"pool_id", pool.pool_id},
                  {"workers", pool.workers_per_node}});
        start_timers_for_node(nc.node_id);
      }
    }
    if (live_in_pool > 0) {
      // Pool-manager context: forwards heartbeats of its own.
      std::string pool_id = pool.pool_id;
      std::function<void()> tick = [this, pool_id]() {
        if (done_) return;
        emit("pool:" + pool_id, monitoring::EventKind::Heartbeat, json::object());
        loop_.post(static_cast<std::int64_t>(cfg_.policy.heartbeat_interval_ms) * 1000,
                   [this, pool_id] { heartbeat_pool(pool_id); });
      };
      emit("pool:" + pool_id, monitoring::EventKind::Heartbeat, json::object());
      loop_.post(static_cast<std::int64_t>(cfg_.policy.heartbeat_interval_ms) * 1000,
                 [this, pool_id] { heartbeat_pool(pool_id); });
    }
  }
  provisioned_ = true;
  if (result.live_nodes.empty()) throw InitFailure(result.failed_nodes);
  return result;
}

void Runtime::heartbeat_pool(const std::string& pool_id) {
  if (done_) return;
  emit("pool:" + pool_id, monitoring::EventKind::Heartbeat, json::object());
  loop_.post(static_cast<std::int64_t>(cfg_.policy.heartbeat_interval_ms) * 1000,
             [this, pool_id] { heartbeat_pool(pool_id); });
}

void Runtime::start_timers_for_node(const std::string& node_id) {
  Node* n = find_node(node_id);
  if (!n) return;
  int epoch = n->kill_epoch;
  heartbeat_tick(node_id, epoch);
  loop_.post(static_cast<std::int64_t>(cfg_.sample_period_ms) * 1000,
             [this, node_id, epoch] { sample_tick(node_id, epoch); });
}

void Runtime::heartbeat_tick(const std::string& node_id, int epoch) {
  Node* n = find_node(node_id);
  if (!n || n->kill_epoch != epoch || !n->st.alive() || done_) return;
  if (!n->hb_suspended)
    emit("node:" + node_id, monitoring::EventKind::Heartbeat, json::object());
  loop_.post(static_cast<std::int64_t>(cfg_.policy.heartbeat_interval_ms) * 1000,
             [this, node_id, epoch] { heartbeat_tick(node_id, epoch); });
}

void Runtime::sample_tick(const std::string& node_id, int epoch) {
  Node* n = find_node(node_id);
  if (!n || n->kill_epoch != epoch || !n->st.alive() || done_) return;
  emit("node:" + node_id, monitoring::EventKind::ResourceSample,
       monitoring::sample_node(n->st).to_json());
  loop_.post(static_cast<std::int64_t>(cfg_.sample_period_ms) * 1000,
             [this, node_id, epoch] { sample_tick(node_id, epoch); });
}

void Runtime::detector_tick() {
  if (done_) return;
  auto events = detector_.detect(*store_, loop_.now_ms());
  for (const auto& ev : events) {
    emit("detector", monitoring::EventKind::LogRecord,
         json{{"event", ev.kind == monitoring::DetectorEvent::Suspected ? "suspected" : "recovered"},
              {"component", ev.component},
              {"silent_ms", ev.silent_ms}});
  }
  if (cfg_.mode == RunMode::Wrath && !events.empty()) {
    for (const auto& row : resilience_.update_denylist(denylist_, events))
      emit("resilience", monitoring::EventKind::LogRecord, row);
  }
  for (const auto& ev : events) {
    if (ev.component.rfind("node:", 0) != 0) continue;
    std::string node_id = ev.component.substr(5);
    Node* n = find_node(node_id);
    if (!n) continue;
    if (ev.kind == monitoring::DetectorEvent::Suspected) {
      if (cfg_.mode == RunMode::Wrath) n->st.denylisted = true;
      fail_leases_on_node(node_id, ev.component, resilience::ManifestationKind::HeartbeatLoss);
      reladder_hints_for_node(node_id);
    } else {
      n->st.denylisted = false;
      pump();
    }
  }
  loop_.post(std::max<std::int64_t>(1, cfg_.policy.heartbeat_interval_ms * 1000 / 2),
             [this] { detector_tick(); });
}

void Runtime::watchdog_tick() {
  if (done_) return;
  if (loop_.now_ms() - last_progress_ms_ > cfg_.stall_timeout_ms) {
    stalled_ = true;
    app_failed_ = true;
    emit("manager", monitoring::EventKind::LogRecord,
         json{{"event", "stall_abort"}, {"idle_ms", loop_.now_ms() - last_progress_ms_}});
    for (auto& [id, rec] : records_)
      if (!taskgraph::is_terminal(rec.state)) apply_transition(id, taskgraph::TaskEvent::Cancel, "stalled");
    leases_.clear();
    hinted_.clear();
    check_done();
    return;
  }
  loop_.post(1'000'000, [this] { watchdog_tick(); });
}

int Runtime::task_duration_ms(const taskgraph::TaskSpec& spec) const {
  if (spec.args.is_object() && spec.args.contains("_duration_ms"))
    return spec.args["_duration_ms"].get<int>();
  return cfg_.default_task_duration_ms;
}

void Runtime::apply_transition(const std::string& task_id, taskgraph::TaskEvent event,
                               const std::string& reason) {
  auto& rec = records_.at(task_id);
  taskgraph::TaskState from = rec.state;
  rec = taskgraph::transition(std::move(rec), event);
  last_progress_ms_ = loop_.now_ms();
  emit_transition(rec, from, reason);
}

void Runtime::emit_transition(const taskgraph::TaskRecord& rec, taskgraph::TaskState from,
                              const std::string& reason) {
  json body{{"task_id", rec.spec.id},
            {"kind", rec.spec.kind},
            {"from", taskgraph::to_string(from)},
            {"to", taskgraph::to_string(rec.state)},
            {"attempt", static_cast<int>(rec.attempts.size()) - 1}};
  if (!rec.attempts.empty()) {
    const auto& a = rec.attempts.back();
    body["pool_id"] = a.pool_id;
    body["node_id"] = a.node_id;
    body["worker_id"] = a.worker_id;
    if (a.ladder_step > 0) body["ladder_step"] = a.ladder_step;
  }
  if (!reason.empty()) body["reason"] = reason;
  if (rec.dep_fail_root) body["dep_root"] = *rec.dep_fail_root;
  emit("manager", monitoring::EventKind::StateTransition, std::move(body));
}

void Runtime::mark_ready_tasks() {
  for (const auto& id : taskgraph::ready_tasks(*wl_, records_)) {
    apply_transition(id, taskgraph::TaskEvent::MarkReady);
    ready_queue_.push_back(id);
  }
}

bool Runtime::admission_ok(const Node& n, const HintEntry& h) const {
  const auto& spec = records_.at(h.task_id).spec;
  if (!h.diag) return true;  // baseline retries are requirement-blind
  int mem_need = spec.requirements.memory_units;
  if (h.diag->resource_need && h.diag->resource_need->kind == resilience::ResourceKind::Memory)
    mem_need = std::max(mem_need, h.diag->resource_need->amount);
  if (n.st.free_memory_units() < mem_need) return false;
  for (const auto& p : spec.requirements.packages)
    if (!n.st.config.installed_packages.count(p)) return false;
  return true;
}

void Runtime::pump() {
  if (done_) return;
  // Hinted (retry) placements first: admission-gated, wait for their target.
  for (std::size_t i = 0; i < hinted_.size();) {
    HintEntry& h = hinted_[i];
    if (taskgraph::is_terminal(records_.at(h.task_id).state)) {
      hinted_.erase(hinted_.begin() + static_cast<std::ptrdiff_t>(i));
      continue;
    }
    Node* n = find_node(h.placement.node_id);
    bool target_gone = !n || !n->st.alive() || n->st.denylisted ||
                       denylist_.contains("node:" + h.placement.node_id);
    if (target_gone) {
      ++i;  // handled by reladder_hints_for_node when the denylist changes
      continue;
    }
    bool has_free_worker = false;
    for (const auto& w : n->workers)
      if (w.state == WorkerSlot::State::Free) {
        has_free_worker = true;
        break;
      }
    if (has_free_worker && admission_ok(*n, h)) {
      std::string task = h.task_id;
      int step = h.placement.ladder_step;
      std::string pool = h.placement.pool_id, node = h.placement.node_id;
      hinted_.erase(hinted_.begin() + static_cast<std::ptrdiff_t>(i));
      dispatch(task, pool, node, step);
      i = 0;  // dispatch may free/occupy slots; rescan from the front
      continue;
    }
    ++i;
  }
  // Unhinted: requirement-blind placement within the default pool.
  while (!ready_queue_.empty()) {
    const std::string& front = ready_queue_.front();
    if (records_.at(front).state != taskgraph::TaskState::Ready) {
      ready_queue_.pop_front();
      continue;
    }
    Node* best = nullptr;
    int best_free = 0;
    for (const auto& id : node_order_) {
      Node& n = nodes_.at(id);
      if (n.st.pool_id != topo_.default_pool || !n.st.alive() || n.st.denylisted) continue;
      int free = 0;
      for (const auto& w : n.workers)
        if (w.state == WorkerSlot::State::Free) ++free;
      if (free > best_free) {
        best = &n;
        best_free = free;
      }
    }
    if (!best) break;  // NoCapacity: tasks stay queued
    std::string task = ready_queue_.front();
    ready_queue_.pop_front();
    dispatch(task, best->st.pool_id, best->st.config.node_id, 0);
  }
}

void Runtime::dispatch(const std::string& task_id, const std::string& pool_id,
                       const std::string& node_id, int ladder_step) {
  auto& rec = records_.at(task_id);
  if (rec.state == taskgraph::TaskState::Ready)
    apply_transition(task_id, taskgraph::TaskEvent::Dispatch);
  Node* n = find_node(node_id);
  int worker = -1;
  for (std::size_t w = 0; w < n->workers.size(); ++w)
    if (n->workers[w].state == WorkerSlot::State::Free) {
      worker = static_cast<int>(w);
      break;
    }
  n->workers[worker].state = WorkerSlot::State::Busy;
  leases_[task_id] = Lease{pool_id, node_id, worker};

  taskgraph::AttemptRecord attempt;
  attempt.attempt_index = static_cast<int>(rec.attempts.size());
  attempt.pool_id = pool_id;
  attempt.node_id = node_id;
  attempt.worker_id = worker_component(node_id, worker);
  attempt.start_us = loop_.now_us();
  attempt.ladder_step = ladder_step;
  rec.attempts.push_back(std::move(attempt));

  emit("manager", monitoring::EventKind::LogRecord,
       json{{"event", "dispatch"},
            {"task_id", task_id},
            {"pool_id", pool_id},
            {"node_id", node_id},
            {"worker_id", worker_component(node_id, worker)},
            {"ladder_step", ladder_step}});

  int epoch = n->kill_epoch;
  loop_.post(static_cast<std::int64_t>(cfg_.dispatch_latency_ms) * 1000,
             [this, task_id, node_id, epoch] { start_attempt(task_id, node_id, epoch); });
}

void Runtime::start_attempt(const std::string& task_id, const std::string& node_id, int epoch) {
  Node* n = find_node(node_id);
  if (!n || n->kill_epoch != epoch || !n->st.alive()) return;  // dispatch lost with the node
  auto& rec = records_.at(task_id);
  if (rec.state != taskgraph::TaskState::Dispatched) return;  // cancelled in flight

  apply_transition(task_id, taskgraph::TaskEvent::Start);
  auto& attempt = rec.attempts.back();
  attempt.start_us = loop_.now_us();
  int worker = leases_.at(task_id).worker;
  n->st.running.insert({task_id, attempt.worker_id});

  const taskgraph::TaskSpec& spec = rec.spec;
  int need = spec.requirements.memory_units;
  if (n->st.free_memory_units() < need) {
    // Reservation failed: the attempt ends with an out-of-memory report and
    // no partial output.
    resilience::FailureReport rep;
    rep.task_id = task_id;
    rep.source = "node:" + node_id;
    rep.kind = resilience::ManifestationKind::ExceptionText;
    std::ostringstream os;
    os << "MemoryError: cannot reserve " << need << " memory units on node '" << node_id
       << "' (capacity " << n->st.config.memory_capacity_units << ", in use "
       << n->st.memory_in_use_units << ")";
    rep.exception_text = os.str();
    rep.attempt_index = attempt.attempt_index;
    rep.resource_request = resilience::ResourceRequest{resilience::ResourceKind::Memory, need};
    loop_.post(static_cast<std::int64_t>(kReservationFailMs) * 1000,
               [this, task_id, node_id, epoch, rep] {
                 finish_attempt(task_id, node_id, epoch, false, json(), "", rep, 0, 0, false);
               });
    return;
  }

  n->st.memory_in_use_units += need;
  emit("node:" + node_id, monitoring::EventKind::ResourceSample,
       monitoring::sample_node(n->st).to_json());

  WorkerEnv env(spec, &values_, &n->st.config.installed_packages,
                n->st.config.file_handle_limit, &n->st.open_files);
  json value;
  std::string error_text;
  bool success = false, killed = false;
  try {
    value = registry_->get(spec.fn)(spec.args, env);
    success = true;
  } catch (const WorkerKilledSignal&) {
    killed = true;
  } catch (const std::exception& e) {
    error_text = e.what();
  }

  int dur = task_duration_ms(spec);
  int delay_ms;
  std::optional<resilience::FailureReport> report;
  std::string digest;
  if (success) {
    delay_ms = dur;
    digest = digest_of(value);
  } else {
    resilience::FailureReport rep;
    rep.task_id = task_id;
    rep.source = "node:" + node_id;
    rep.attempt_index = attempt.attempt_index;
    if (killed) {
      rep.kind = resilience::ManifestationKind::ComponentCrash;
      rep.component = worker_component(node_id, worker);
      delay_ms = std::max(1, dur / 2);
    } else {
      rep.kind = resilience::ManifestationKind::ExceptionText;
      rep.exception_text = error_text;
      if (error_text.rfind("ImportError", 0) == 0 || error_text.rfind("ModuleNotFoundError", 0) == 0)
        delay_ms = kImportFailMs;
      else if (error_text.find("Too many open files") != std::string::npos) {
        delay_ms = kUlimitFailMs;
        rep.resource_request = resilience::ResourceRequest{resilience::ResourceKind::FileHandles,
                                                           env.requested_files()};
      } else
        delay_ms = std::max(1, dur / 2);
    }
    report = std::move(rep);
  }

  int opened = env.opened_files();
  loop_.post(static_cast<std::int64_t>(delay_ms) * 1000,
             [this, task_id, node_id, epoch, success, value, digest, report, opened, need,
              killed] {
               finish_attempt(task_id, node_id, epoch, success, value, digest, report, opened,
                              need, killed);
             });
}

void Runtime::finish_attempt(const std::string& task_id, const std::string& node_id, int epoch,
                             bool success, json value, std::string digest,
                             std::optional<resilience::FailureReport> report, int opened_files,
                             int reserved_units, bool worker_killed) {
  Node* n = find_node(node_id);
  if (!n || n->kill_epoch != epoch || !n->st.alive())
    return;  // node died mid-attempt: no outcome, heartbeat loss will tell

  auto lease_it = leases_.find(task_id);
  int worker = lease_it != leases_.end() ? lease_it->second.worker : -1;
  n->st.memory_in_use_units -= reserved_units;
  n->st.open_files -= opened_files;
  auto& rec = records_.at(task_id);
  n->st.running.erase({task_id, rec.attempts.back().worker_id});
  if (worker >= 0) {
    if (worker_killed) {
      // Supervisor observed abnormal worker termination; the slot relaunches
      // after a short delay regardless of the policy outcome.
      n->workers[worker].state = WorkerSlot::State::Restarting;
      int e = n->kill_epoch;
      loop_.post(static_cast<std::int64_t>(cfg_.worker_restart_ms) * 1000, [this, node_id, worker, e] {
        Node* nn = find_node(node_id);
        if (!nn || nn->kill_epoch != e || !nn->st.alive()) return;
        if (nn->workers[worker].state == WorkerSlot::State::Restarting)
          nn->workers[worker].state = WorkerSlot::State::Free;
        pump();
      });
    } else {
      n->workers[worker].state = WorkerSlot::State::Free;
    }
  }
  emit("node:" + node_id, monitoring::EventKind::ResourceSample,
       monitoring::sample_node(n->st).to_json());

  auto& attempt = rec.attempts.back();
  attempt.end_us = loop_.now_us();
  taskgraph::AttemptOutcome outcome;
  outcome.success = success;
  if (success) {
    outcome.value_digest = digest;
  } else if (report) {
    report->timestamp_us = loop_.now_us();
    outcome.failure = *report;
  }
  attempt.outcome = std::move(outcome);

  if (taskgraph::is_terminal(rec.state)) return;  // cancelled while running

  if (success) {
    loop_.post(static_cast<std::int64_t>(cfg_.result_latency_ms) * 1000,
               [this, task_id, digest, value] { on_success(task_id, digest, value); });
  } else {
    auto rep = *report;
    loop_.post(static_cast<std::int64_t>(cfg_.result_latency_ms) * 1000,
               [this, task_id, rep] { on_failure(task_id, rep); });
  }
}

void Runtime::release_lease(const std::string& task_id, bool /*free_worker*/) {
  leases_.erase(task_id);
}

void Runtime::on_success(const std::string& task_id, const std::string& digest, json value) {
  auto& rec = records_.at(task_id);
  if (taskgraph::is_terminal(rec.state)) return;  // result raced a cancellation
  release_lease(task_id, false);
  values_[task_id] = std::move(value);
  apply_transition(task_id, taskgraph::TaskEvent::Succeed);
  ++counters_.succeeded;
  if (rec.attempts.size() >= 2) ++counters_.retry_succeeded;
  (void)digest;
  mark_ready_tasks();
  pump();
  check_done();
}

void Runtime::on_failure(const std::string& task_id, resilience::FailureReport report) {
  auto& rec = records_.at(task_id);
  if (taskgraph::is_terminal(rec.state)) return;
  release_lease(task_id, false);
  apply_transition(task_id, taskgraph::TaskEvent::Fail);
  emit(report.source, monitoring::EventKind::FailureReportEvent, report.to_json());
  if (cfg_.mode == RunMode::Wrath)
    handle_with_policy(task_id, report);
  else
    handle_flat_retry(task_id);
}

void Runtime::handle_with_policy(const std::string& task_id,
                                 const resilience::FailureReport& report) {
  auto& rec = records_.at(task_id);
  auto cls = resilience_.classify(report);
  auto v = view();
  auto diag = resilience_.analyze_root_cause(report, cls, rec.spec, *store_, v);
  auto action = resilience_.decide(rec, diag, v, denylist_, *store_);
  auto cost = resilience_.last_cost();
  counters_.decision_us += cost.total_us();

  emit("resilience", monitoring::EventKind::LogRecord,
       json{{"event", "decision"},
            {"task_id", task_id},
            {"attempt", static_cast<int>(rec.attempts.size()) - 1},
            {"action", action.to_json()},
            {"diagnosis", diag.to_json()},
            {"duration_us", cost.total_us()}});

  loop_.post(cost.total_us(), [this, task_id, action, diag] {
    if (done_ || taskgraph::is_terminal(records_.at(task_id).state)) return;
    switch (action.kind) {
      case resilience::ActionKind::Terminate:
        terminate_application(task_id, action.reason);
        break;
      case resilience::ActionKind::RestartComponent: {
        emit("manager", monitoring::EventKind::LogRecord,
             json{{"event", "restart_component"}, {"component", action.component}});
        if (action.component.rfind("nodemgr:", 0) == 0) {
          Node* n = find_node(action.component.substr(8));
          if (n) n->hb_suspended = false;
        }
        if (action.placement)
          grant_retry(task_id, *action.placement, diag);
        else
          give_up_task(task_id, action.reason);
        break;
      }
      case resilience::ActionKind::HierarchicalRetry:
        grant_retry(task_id, *action.placement, diag);
        break;
      case resilience::ActionKind::GiveUp:
        give_up_task(task_id, action.reason);
        break;
    }
  });
}

void Runtime::handle_flat_retry(const std::string& task_id) {
  auto& rec = records_.at(task_id);
  if (rec.has_budget()) {
    // Parsl-style flat retry: a random live node of the same executor,
    // requirement- and denylist-blind.
    std::string pool = rec.attempts.empty() ? topo_.default_pool : rec.attempts.back().pool_id;
    std::vector<std::string> candidates;
    for (const auto& id : node_order_) {
      const Node& n = nodes_.at(id);
      if (n.st.pool_id == pool && n.st.alive()) candidates.push_back(id);
    }
    if (candidates.empty()) {
      give_up_task(task_id, "no live node in executor");
      return;
    }
    const std::string& target = candidates[run_rng_() % candidates.size()];
    emit("manager", monitoring::EventKind::LogRecord,
         json{{"event", "flat_retry"}, {"task_id", task_id}, {"node_id", target}});
    grant_retry(task_id, resilience::Placement{0, pool, target}, std::nullopt);
  } else {
    give_up_task(task_id, "budget_exhausted");
  }
}

void Runtime::grant_retry(const std::string& task_id, const resilience::Placement& placement,
                          std::optional<resilience::Diagnosis> diag) {
  apply_transition(task_id, taskgraph::TaskEvent::RetryGranted);
  if (retried_set_.insert(task_id).second) ++counters_.retried;
  hinted_.push_back(HintEntry{task_id, placement, std::move(diag)});
  pump();
}

void Runtime::mark_application_failure(const std::string& task_id, const std::string& reason) {
  if (!ttf_ms_) ttf_ms_ = loop_.now_ms();
  app_failed_ = true;
  emit("manager", monitoring::EventKind::LogRecord,
       json{{"event", "application_failure"}, {"task_id", task_id}, {"reason", reason}});
}

void Runtime::give_up_task(const std::string& task_id, const std::string& reason) {
  apply_transition(task_id, taskgraph::TaskEvent::Terminate, reason);
  mark_application_failure(task_id, reason);

  // Dependency failure is declared only now, after the retry budget is gone.
  const resilience::Diagnosis* root_diag = resilience_.diagnosis_of(task_id);
  for (const auto& [child, root] : taskgraph::propagate_dep_failure(*wl_, records_, task_id)) {
    records_.at(child).dep_fail_root = root;
    apply_transition(child, taskgraph::TaskEvent::MarkDepFailed);
    ++counters_.dep_failed;
    resilience::FailureReport rep;
    rep.task_id = child;
    rep.source = "manager";
    rep.kind = resilience::ManifestationKind::ExceptionText;
    rep.exception_text = "DependencyFailure: upstream task '" + root + "' failed";
    rep.dep_root = root;
    rep.timestamp_us = loop_.now_us();
    emit("manager", monitoring::EventKind::FailureReportEvent, rep.to_json());
    const resilience::Diagnosis* rd =
        root == task_id ? root_diag : resilience_.diagnosis_of(root);
    if (rd) resilience_.record_diagnosis(child, *rd);
  }
  check_done();
}

void Runtime::terminate_application(const std::string& task_id, const std::string& reason) {
  mark_application_failure(task_id, reason);
  emit("manager", monitoring::EventKind::LogRecord,
       json{{"event", "terminate_application"}, {"task_id", task_id}, {"reason", reason}});
  for (auto& [id, rec] : records_)
    if (!taskgraph::is_terminal(rec.state))
      apply_transition(id, taskgraph::TaskEvent::Cancel, "fail-fast: " + reason);
  leases_.clear();
  hinted_.clear();
  ready_queue_.clear();
  check_done();
}

void Runtime::fail_leases_on_node(const std::string& node_id, const std::string& component,
                                  resilience::ManifestationKind kind) {
  std::vector<std::string> affected;
  for (const auto& [task, lease] : leases_)
    if (lease.node_id == node_id) affected.push_back(task);
  for (const auto& task : affected) {
    auto& rec = records_.at(task);
    if (taskgraph::is_terminal(rec.state)) continue;
    resilience::FailureReport rep;
    rep.task_id = task;
    rep.source = "detector";
    rep.kind = kind;
    rep.component = component;
    rep.attempt_index = static_cast<int>(rec.attempts.size()) - 1;
    rep.timestamp_us = loop_.now_us();
    if (!rec.attempts.empty() && !rec.attempts.back().outcome) {
      auto& attempt = rec.attempts.back();
      attempt.end_us = loop_.now_us();
      taskgraph::AttemptOutcome out;
      out.success = false;
      out.failure = rep;
      attempt.outcome = std::move(out);
    }
    on_failure(task, rep);
  }
}

void Runtime::reladder_hints_for_node(const std::string& node_id) {
  for (std::size_t i = 0; i < hinted_.size();) {
    if (hinted_[i].placement.node_id != node_id) {
      ++i;
      continue;
    }
    HintEntry entry = hinted_[i];
    hinted_.erase(hinted_.begin() + static_cast<std::ptrdiff_t>(i));
    auto& rec = records_.at(entry.task_id);
    if (taskgraph::is_terminal(rec.state)) continue;
    if (cfg_.mode == RunMode::Wrath && entry.diag) {
      auto v = view();
      auto target = resilience_.next_retry_target(rec, *entry.diag, v, denylist_, *store_);
      auto cost = resilience_.last_cost();
      counters_.decision_us += cost.decide_us;
      emit("resilience", monitoring::EventKind::LogRecord,
           json{{"event", "decision"},
                {"task_id", entry.task_id},
                {"reladder", true},
                {"duration_us", cost.decide_us},
                {"action", target
                               ? json{{"action", "hierarchical_retry"},
                                      {"placement",
                                       {{"ladder_step", target->ladder_step},
                                        {"pool_id", target->pool_id},
                                        {"node_id", target->node_id}}}}
                               : json{{"action", "give_up"}}}});
      if (target) {
        hinted_.push_back(HintEntry{entry.task_id, *target, entry.diag});
      } else {
        apply_transition(entry.task_id, taskgraph::TaskEvent::Fail, "retry target lost");
        give_up_task(entry.task_id, "no feasible retry target");
      }
    } else {
      // Baseline: pick another random node of the same pool.
      std::vector<std::string> candidates;
      for (const auto& id : node_order_) {
        const Node& n = nodes_.at(id);
        if (n.st.pool_id == entry.placement.pool_id && n.st.alive()) candidates.push_back(id);
      }
      if (candidates.empty()) {
        apply_transition(entry.task_id, taskgraph::TaskEvent::Fail, "retry target lost");
        give_up_task(entry.task_id, "no live node in executor");
      } else {
        entry.placement.node_id = candidates[run_rng_() % candidates.size()];
        hinted_.push_back(entry);
      }
    }
  }
  pump();
}

void Runtime::check_done() {
  if (done_) return;
  for (const auto& [id, rec] : records_)
    if (!taskgraph::is_terminal(rec.state)) return;
  done_ = true;
  emit("manager", monitoring::EventKind::LogRecord,
       json{{"event", "run_end"},
            {"application_success", !app_failed_},
            {"tasks", counters_.tasks},
            {"succeeded", counters_.succeeded},
            {"retried", counters_.retried},
            {"retry_succeeded", counters_.retry_succeeded},
            {"dep_failed", counters_.dep_failed}});
}

void Runtime::kill_node(const std::string& node_id) {
  Node* n = find_node(node_id);
  if (!n) throw UnknownNode(node_id);
  emit("chaos", monitoring::EventKind::LogRecord,
       json{{"event", "kill_node"}, {"node_id", node_id}});
  n->st.liveness = Liveness::Killed;
  n->kill_epoch += 1;
  n->st.memory_in_use_units = 0;
  n->st.open_files = 0;
  n->st.running.clear();
  for (auto& w : n->workers) w.state = WorkerSlot::State::Dead;
  // Running attempts vanish without reports; heartbeat loss is the only
  // signal (leases stay until the detector fires).
}

void Runtime::revive_node(const std::string& node_id) {
  Node* n = find_node(node_id);
  if (!n) throw UnknownNode(node_id);
  emit("chaos", monitoring::EventKind::LogRecord,
       json{{"event", "revive_node"}, {"node_id", node_id}});
  n->st.liveness = Liveness::Alive;
  n->kill_epoch += 1;
  n->st.memory_in_use_units = 0;
  n->st.open_files = 0;
  n->st.running.clear();
  n->hb_suspended = false;
  if (n->workers.empty()) {
    for (const auto& pool : topo_.pools)
      if (pool.pool_id == n->st.pool_id) n->workers.resize(pool.workers_per_node);
  }
  for (auto& w : n->workers) w.state = WorkerSlot::State::Free;
  n->provisioned = true;
  start_timers_for_node(node_id);
  pump();
}

void Runtime::suspend_node_manager(const std::string& node_id) {
  Node* n = find_node(node_id);
  if (!n) throw UnknownNode(node_id);
  n->hb_suspended = true;
}

void Runtime::restart_component(const std::string& component_id) {
  std::string id = component_id;
  if (id.rfind("nodemgr:", 0) == 0) id = id.substr(8);
  if (id.rfind("node:", 0) == 0) id = id.substr(5);

  if (id.rfind("worker:", 0) == 0) {
    // worker:<node>:<index>
    auto rest = id.substr(7);
    auto colon = rest.find(':');
    std::string node_id = rest.substr(0, colon);
    int w = std::stoi(rest.substr(colon + 1));
    Node* n = find_node(node_id);
    if (!n) throw UnknownNode(node_id);
    if (!n->st.alive()) throw RestartFailed(component_id);
    emit("manager", monitoring::EventKind::LogRecord,
         json{{"event", "restart_component"}, {"component", component_id}});
    if (n->workers[w].state == WorkerSlot::State::Free ||
        n->workers[w].state == WorkerSlot::State::Busy) {
      emit("manager", monitoring::EventKind::LogRecord,
           json{{"event", "warning"},
                {"message", "restart requested for healthy component " + component_id}});
      return;
    }
    n->workers[w].state = WorkerSlot::State::Restarting;
    int epoch = n->kill_epoch;
    loop_.post(static_cast<std::int64_t>(cfg_.worker_restart_ms) * 1000, [this, node_id, w, epoch] {
      Node* nn = find_node(node_id);
      if (!nn || nn->kill_epoch != epoch || !nn->st.alive()) return;
      nn->workers[w].state = WorkerSlot::State::Free;
      pump();
    });
    return;
  }

  Node* n = find_node(id);
  if (!n) throw UnknownNode(id);
  if (!n->st.alive()) throw RestartFailed(component_id);
  emit("manager", monitoring::EventKind::LogRecord,
       json{{"event", "restart_component"}, {"component", "nodemgr:" + id}});
  if (!n->hb_suspended && n->st.running.empty() && leases_.empty()) {
    emit("manager", monitoring::EventKind::LogRecord,
         json{{"event", "warning"},
              {"message", "restart requested for healthy component nodemgr:" + id}});
    return;
  }
  // Relaunch: fresh state, heartbeats resume, leased tasks go back to the
  // manager as retry candidates.
  n->hb_suspended = false;
  n->st.memory_in_use_units = 0;
  n->st.open_files = 0;
  n->st.running.clear();
  for (auto& w : n->workers)
    if (w.state == WorkerSlot::State::Busy) w.state = WorkerSlot::State::Free;
  fail_leases_on_node(id, "nodemgr:" + id, resilience::ManifestationKind::ComponentCrash);
}

RunResult Runtime::run(const taskgraph::Workload& wl) {
  wl_ = &wl;
  records_.clear();
  for (const auto& [id, spec] : wl.tasks) {
    taskgraph::TaskRecord rec;
    rec.spec = spec;
    if (cfg_.mode == RunMode::Baseline) rec.spec.max_retries = cfg_.baseline_retries;
    records_.emplace(id, std::move(rec));
  }
  counters_ = {};
  counters_.tasks = static_cast<int>(wl.tasks.size());
  resilience_.reset_run_state();

  if (!cfg_.event_log_path.empty()) store_->set_jsonl_sink(cfg_.event_log_path);
  emit("manager", monitoring::EventKind::LogRecord,
       json{{"event", "run_start"},
            {"workload", wl.name},
            {"mode", cfg_.mode == RunMode::Wrath ? "wrath" : "baseline"},
            {"seed", cfg_.seed},
            {"tasks", counters_.tasks}});

  if (!provisioned_) provision();

  if (!cfg_.policy.history_file.empty()) {
    std::ifstream in(cfg_.policy.history_file);
    if (in) {
      json j;
      in >> j;
      for (const auto& row : j)
        store_->seed_history(row.at("kind").get<std::string>(),
                             {row.at("pool_id").get<std::string>(),
                              row.at("node_id").get<std::string>()},
                             {row.value("successes", 0), row.value("failures", 0)});
    }
  }

  emit("manager", monitoring::EventKind::Heartbeat, json::object());
  std::function<void()> manager_hb = [this, &manager_hb]() {};  // replaced below
  // Manager heartbeat timer.
  std::function<void()> hb_tick_holder;
  auto schedule_manager_hb = std::make_shared<std::function<void()>>();
  *schedule_manager_hb = [this, schedule_manager_hb] {
    if (done_) return;
    emit("manager", monitoring::EventKind::Heartbeat, json::object());
    loop_.post(static_cast<std::int64_t>(cfg_.policy.heartbeat_interval_ms) * 1000,
               *schedule_manager_hb);
  };
  loop_.post(static_cast<std::int64_t>(cfg_.policy.heartbeat_interval_ms) * 1000,
             *schedule_manager_hb);

  loop_.post(std::max<std::int64_t>(1, cfg_.policy.heartbeat_interval_ms * 1000 / 2),
             [this] { detector_tick(); });
  loop_.post(1'000'000, [this] { watchdog_tick(); });

  for (const auto& c : cfg_.chaos) {
    loop_.post_at(static_cast<std::int64_t>(c.at_ms * 1000), [this, c] {
      if (done_) return;
      if (c.kind == ChaosEvent::KillNode)
        kill_node(c.node_id);
      else
        revive_node(c.node_id);
    });
  }

  last_progress_ms_ = 0.0;
  mark_ready_tasks();
  pump();
  check_done();  // empty workload edge case

  while (!done_ && loop_.step()) {
  }
  if (!done_) {
    // Queue drained without completion: treat as a stall.
    stalled_ = true;
    app_failed_ = true;
    for (auto& [id, rec] : records_)
      if (!taskgraph::is_terminal(rec.state))
        apply_transition(id, taskgraph::TaskEvent::Cancel, "stalled");
    check_done();
  }

  RunResult result;
  result.application_success = !app_failed_ && !stalled_;
  result.makespan_ms = loop_.now_ms();
  result.time_to_failure_ms = ttf_ms_;
  result.records = records_;
  result.values = values_;
  result.counters = counters_;
  result.stalled = stalled_;
  store_->close_sink();
  return result;
}

}  // namespace wrath::vcluster
