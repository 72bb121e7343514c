#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "wrath/monitoring.hpp"
#include "wrath/resilience.hpp"
#include "wrath/sim.hpp"
#include "wrath/taskgraph.hpp"
#include "wrath/tasks.hpp"
#include "wrath/vcluster.hpp"

namespace wrath::vcluster {

enum class RunMode { Wrath, Baseline };

struct ChaosEvent {
  double at_ms = 0.0;
  enum Kind { KillNode, ReviveNode } kind = KillNode;
  std::string node_id;
};

struct RuntimeConfig {
  RunMode mode = RunMode::Wrath;
  int baseline_retries = 3;  // flat budget when mode == Baseline
  std::uint64_t seed = 0;
  std::string run_id = "run-0";
  resilience::PolicyConfig policy;
  std::vector<resilience::TaxonomyRule> rules = resilience::default_taxonomy_rules();
  int default_task_duration_ms = 100;
  int sample_period_ms = 250;
  int dispatch_latency_ms = 1;
  int result_latency_ms = 1;
  int worker_restart_ms = 10;
  int stall_timeout_ms = 60'000;  // virtual; aborts a wedged run
  std::vector<ChaosEvent> chaos;
  std::string event_log_path;  // optional JSONL sink
};

struct ProvisionResult {
  std::vector<std::string> live_nodes;
  std::vector<std::string> failed_nodes;  // pilot-job init failures
};

// Engine-side incremental counters; tests check they equal a full recount
// of the event log.
struct RunCounters {
  int tasks = 0;
  int succeeded = 0;
  int retried = 0;
  int retry_succeeded = 0;
  int dep_failed = 0;
  std::int64_t decision_us = 0;
};

struct RunResult {
  bool application_success = false;
  double makespan_ms = 0.0;
  std::optional<double> time_to_failure_ms;
  std::map<std::string, taskgraph::TaskRecord> records;
  std::map<std::string, json> values;  // in-run value table (task id -> result)
  RunCounters counters;
  bool stalled = false;
};

struct PlacementAssignment {
  std::string task_id, pool_id, node_id;
};

// Requirement-blind placement rule for unhinted scheduling: live,
// non-denylisted node of `pool` with the most free worker slots, ties to
// the lowest node_id. Tasks that fit nowhere are left out (queued).
std::vector<PlacementAssignment> schedule(const ClusterView& view,
                                          const std::vector<std::string>& ready,
                                          const std::optional<resilience::Placement>& hint,
                                          const std::string& pool);

// The virtual cluster: manager event loop owning all task records, per-node
// manager/worker contexts, monitoring agents, and the failure-handling flow.
// One Runtime executes one run.
class Runtime {
 public:
  Runtime(ClusterTopology topo, RuntimeConfig cfg, monitoring::MonitoringStore& store,
          monitoring::RadioLink* link = nullptr, TaskRegistry* registry = nullptr);
  ~Runtime();

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  // Starts node managers and worker slots; nodes flagged init_failure stay
  // unprovisioned and produce a PilotInitFailure report. Throws InitFailure
  // if no node comes up at all.
  ProvisionResult provision();

  RunResult run(const taskgraph::Workload& wl);

  // Direct cluster operations (also used by chaos schedules and tests).
  void kill_node(const std::string& node_id);
  void revive_node(const std::string& node_id);
  void suspend_node_manager(const std::string& node_id);
  // Relaunches a failed node-manager or worker context; leased tasks return
  // to the manager as retry candidates. Throws RestartFailed on dead nodes.
  void restart_component(const std::string& component_id);

  ClusterView view() const;
  EventLoop& loop() { return loop_; }
  monitoring::MonitoringStore& store() { return *store_; }
  const resilience::Denylist& denylist() const { return denylist_; }
  resilience::ResilienceEngine& resilience() { return resilience_; }
  const RuntimeConfig& config() const { return cfg_; }

 private:
  struct WorkerSlot {
    enum class State { Free, Busy, Dead, Restarting } state = State::Free;
  };
  struct Node {
    NodeState st;
    std::vector<WorkerSlot> workers;
    int kill_epoch = 0;
    bool hb_suspended = false;
    bool provisioned = false;
  };
  struct Lease {
    std::string pool_id, node_id;
    int worker = -1;
  };
  struct HintEntry {
    std::string task_id;
    resilience::Placement placement;
    std::optional<resilience::Diagnosis> diag;  // absent for baseline retries
  };

  Node* find_node(const std::string& node_id);
  const Node* find_node(const std::string& node_id) const;
  void emit(const std::string& source, monitoring::EventKind kind, json body);
  void emit_transition(const taskgraph::TaskRecord& rec, taskgraph::TaskState from,
                       const std::string& extra_reason = "");
  void apply_transition(const std::string& task_id, taskgraph::TaskEvent event,
                        const std::string& reason = "");

  void start_timers_for_node(const std::string& node_id);
  void heartbeat_tick(const std::string& node_id, int epoch);
  void heartbeat_pool(const std::string& pool_id);
  void heartbeat_manager();
  void sample_tick(const std::string& node_id, int epoch);
  void detector_tick();
  void watchdog_tick();

  void mark_ready_tasks();
  void pump();
  bool admission_ok(const Node& n, const HintEntry& h) const;
  void dispatch(const std::string& task_id, const std::string& pool_id,
                const std::string& node_id, int ladder_step);
  void start_attempt(const std::string& task_id, const std::string& node_id, int epoch);
  void finish_attempt(const std::string& task_id, const std::string& node_id, int epoch,
                      bool success, json value, std::string digest,
                      std::optional<resilience::FailureReport> report, int opened_files,
                      int reserved_units, bool worker_killed);

  void on_success(const std::string& task_id, const std::string& digest, json value);
  void on_failure(const std::string& task_id, resilience::FailureReport report);
  void handle_with_policy(const std::string& task_id, const resilience::FailureReport& report);
  void handle_flat_retry(const std::string& task_id);
  void grant_retry(const std::string& task_id, const resilience::Placement& placement,
                   std::optional<resilience::Diagnosis> diag);
  void give_up_task(const std::string& task_id, const std::string& reason);
  void terminate_application(const std::string& task_id, const std::string& reason);
  void fail_leases_on_node(const std::string& node_id, const std::string& component,
                           resilience::ManifestationKind kind);
  void reladder_hints_for_node(const std::string& node_id);
  void mark_application_failure(const std::string& task_id, const std::string& reason);
  void check_done();
  void release_lease(const std::string& task_id, bool free_worker);

  int task_duration_ms(const taskgraph::TaskSpec& spec) const;

  ClusterTopology topo_;
  RuntimeConfig cfg_;
  monitoring::MonitoringStore* store_;
  std::unique_ptr<monitoring::InProcLink> own_link_;
  monitoring::RadioAgent agent_;
  TaskRegistry* registry_;

  EventLoop loop_;
  std::map<std::string, Node> nodes_;             // by node_id
  std::vector<std::string> node_order_;           // (pool, node) deterministic order
  const taskgraph::Workload* wl_ = nullptr;
  std::map<std::string, taskgraph::TaskRecord> records_;
  std::map<std::string, json> values_;
  std::map<std::string, Lease> leases_;
  std::deque<std::string> ready_queue_;
  std::vector<HintEntry> hinted_;
  std::map<std::string, std::uint64_t> seq_;
  resilience::ResilienceEngine resilience_;
  resilience::Denylist denylist_;
  monitoring::HeartbeatDetector detector_;
  std::mt19937_64 run_rng_;
  RunCounters counters_;
  std::set<std::string> retried_set_;
  bool provisioned_ = false;
  bool done_ = false;
  bool app_failed_ = false;
  bool stalled_ = false;
  std::optional<double> ttf_ms_;
  double last_progress_ms_ = 0.0;
};

}  // namespace wrath::vcluster
