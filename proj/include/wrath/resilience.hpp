#pragma once

#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "wrath/common.hpp"
#include "wrath/failure.hpp"
#include "wrath/monitoring.hpp"
#include "wrath/taskgraph.hpp"
#include "wrath/vcluster.hpp"

namespace wrath::resilience {

enum class Layer { Application, Framework, Runtime, Environment };
const char* to_string(Layer l);

enum class Cause {
  ZeroDivision,
  RuntimeException,
  WorkerLost,
  ManagerLost,
  DependencyFailure,
  ResourceStarvation,
  PilotInitFailure,
  NodeShutdown,
  EnvMismatch,
  Unknown,
};
const char* to_string(Cause c);

// Detection strategy a taxonomy row prescribes: failure taxonomy library,
// resource profiling, both, or "depends on the root cause".
enum class Detection { FTL, RP, FTL_RP, RC };
const char* to_string(Detection d);

struct FailureClass {
  Layer layer = Layer::Application;
  Cause cause = Cause::Unknown;
  bool retriable = false;
  Detection detection = Detection::FTL;
  std::optional<ResourceKind> starved;        // cause == ResourceStarvation
  std::set<std::string> mentioned_packages;   // captured from exception text

  json to_json() const;
};

// The closed set of (layer, cause, retriable, detection) rows the classifier
// may produce. EnvMismatch is retriable via relocation; dependency rows
// resolve retriability through the root cause.
bool in_taxonomy(const FailureClass& c);

struct TaxonomyRule {
  std::string pattern;  // regex over exception text, first match wins
  Layer layer;
  Cause cause;
  bool retriable;
  Detection detection;
  std::optional<ResourceKind> starved;

  json to_json() const;
  static TaxonomyRule from_json(const json& j);
};

std::vector<TaxonomyRule> default_taxonomy_rules();
std::vector<TaxonomyRule> load_taxonomy_rules(const std::string& path);
void save_taxonomy_rules(const std::vector<TaxonomyRule>& rules, const std::string& path);

struct Diagnosis {
  FailureClass cls;
  std::vector<std::string> evidence;  // references to store events ("source@ts")
  std::optional<ResourceRequest> resource_need;     // iff ResourceStarvation
  std::optional<std::set<std::string>> missing_packages;  // iff EnvMismatch
  std::optional<std::string> suspected_component;
  // Signature for ladder bookkeeping: same signature == same diagnosis.
  std::string signature() const;
  json to_json() const;
};

enum class ActionKind { Terminate, HierarchicalRetry, RestartComponent, GiveUp };
const char* to_string(ActionKind k);

struct Placement {
  int ladder_step = 0;  // 1..4
  std::string pool_id;
  std::string node_id;
};

struct Action {
  ActionKind kind = ActionKind::GiveUp;
  std::string reason;
  std::optional<Placement> placement;    // HierarchicalRetry / RestartComponent
  std::string component;                 // RestartComponent target
  json to_json() const;
};

struct DenylistEntry {
  double added_at_ms = 0.0;
  std::string reason;
};

// Malfunctioning components, excluded from scheduling and retry targeting
// until they resume communication.
class Denylist {
 public:
  bool add(const std::string& component, double at_ms, const std::string& reason);
  bool remove(const std::string& component, double at_ms, const std::string& reason);
  bool contains(const std::string& component) const { return entries_.count(component) != 0; }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, DenylistEntry>& entries() const { return entries_; }
  const std::vector<json>& removal_log() const { return removal_log_; }

 private:
  std::map<std::string, DenylistEntry> entries_;
  std::vector<json> removal_log_;
};

struct PolicyConfig {
  int heartbeat_interval_ms = 500;
  int miss_threshold = 3;
  int default_max_retries = 3;
  double starvation_threshold_pct = 90.0;
  std::string history_file;  // optional cross-run history seed

  static PolicyConfig from_json(const json& j);
  json to_json() const;
};

// Deterministic virtual cost (microseconds) charged per decision stage;
// scanning dominates, mirroring where the real system spends its time.
struct DecisionCost {
  std::int64_t classify_us = 0;
  std::int64_t analyze_us = 0;
  std::int64_t decide_us = 0;
  std::int64_t total_us() const { return classify_us + analyze_us + decide_us; }
};

// Failure categorization + policy engine. Stateless with respect to the
// cluster (reads snapshots); keeps per-task ladder bookkeeping and the
// round-robin cursor for step 4.
class ResilienceEngine {
 public:
  explicit ResilienceEngine(PolicyConfig policy = {},
                            std::vector<TaxonomyRule> rules = default_taxonomy_rules());

  // Decision tree: heartbeat/crash manifestations by component kind, then
  // ordered regex rules over exception text; no match -> Unknown.
  FailureClass classify(const FailureReport& report);

  // Enriches the class with evidence from the monitoring window
  // [attempt start - 2s, failure time] and task/node manifests.
  Diagnosis analyze_root_cause(const FailureReport& report, const FailureClass& cls,
                               const taskgraph::TaskSpec& spec,
                               const monitoring::MonitoringStore& store,
                               const vcluster::ClusterView& view);

  // Policy flow: non-recoverable -> Terminate; framework component failure
  // -> RestartComponent + retry; exhausted budget -> GiveUp; otherwise a
  // targeted HierarchicalRetry.
  Action decide(const taskgraph::TaskRecord& record, const Diagnosis& diag,
                const vcluster::ClusterView& view, const Denylist& denylist,
                const monitoring::MonitoringStore& store);

  // The four-step ladder; nullopt when no feasible target exists.
  std::optional<Placement> next_retry_target(const taskgraph::TaskRecord& record,
                                             const Diagnosis& diag,
                                             const vcluster::ClusterView& view,
                                             const Denylist& denylist,
                                             const monitoring::MonitoringStore& store);

  // Applies detector output: Suspected -> add, Recovered -> remove.
  std::vector<json> update_denylist(Denylist& denylist,
                                    const std::vector<monitoring::DetectorEvent>& events);

  const PolicyConfig& policy() const { return policy_; }
  const std::vector<TaxonomyRule>& rules() const { return rules_; }
  // Virtual cost of the stages run during the last classify/analyze/decide.
  const DecisionCost& last_cost() const { return cost_; }
  // Most recent diagnosis recorded for a task (dependency inheritance).
  const Diagnosis* diagnosis_of(const std::string& task_id) const {
    auto it = diagnosis_memo_.find(task_id);
    return it == diagnosis_memo_.end() ? nullptr : &it->second;
  }
  void record_diagnosis(const std::string& task_id, const Diagnosis& diag) {
    diagnosis_memo_[task_id] = diag;
  }
  void reset_run_state();

 private:
  struct LadderMemo {
    std::string signature;
    int last_step = 1;
    std::string last_node;
  };

  bool feasible(const vcluster::NodeView& n, const Diagnosis& diag,
                const taskgraph::TaskSpec& spec, const Denylist& denylist) const;

  PolicyConfig policy_;
  std::vector<TaxonomyRule> rules_;
  std::vector<std::regex> compiled_;
  std::map<std::string, LadderMemo> ladder_memo_;     // by task id
  std::map<std::string, Diagnosis> diagnosis_memo_;   // by task id
  std::size_t pool_rr_cursor_ = 0;
  DecisionCost cost_;
};

}  // namespace wrath::resilience
