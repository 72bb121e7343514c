#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wrath/common.hpp"
#include "wrath/failure.hpp"

namespace wrath::taskgraph {

// Abstract resource demands a task declares up front. Declared explicitly
// (never inferred from task code); 1 memory unit == 1 simulated GB.
struct RequirementManifest {
  int memory_units = 0;
  std::set<std::string> packages;
  std::optional<int> max_open_files;

  json to_json() const;
  static RequirementManifest from_json(const json& j);
  bool operator==(const RequirementManifest&) const = default;
};

// A unit of work: a registered function plus serialized arguments, with
// explicit dependencies and a retry budget.
struct TaskSpec {
  std::string id;
  std::string kind;
  std::string fn;    // registered function name
  json args = json::object();
  std::vector<std::string> deps;
  RequirementManifest requirements;
  int max_retries = 3;

  json to_json() const;
  static TaskSpec from_json(const json& j);
  bool operator==(const TaskSpec&) const = default;
};

struct CycleError : Error {
  std::vector<std::string> cycle;
  explicit CycleError(std::vector<std::string> c);
};

struct UnknownDependency : Error {
  std::string task_id, missing;
  UnknownDependency(std::string t, std::string m);
};

struct UnknownTask : Error {
  explicit UnknownTask(const std::string& id) : Error("unknown task: " + id) {}
};

// Validated DAG of tasks. Immutable after construction.
class Workload {
 public:
  std::string name;
  std::map<std::string, TaskSpec> tasks;

  const TaskSpec& at(const std::string& id) const;
  bool contains(const std::string& id) const { return tasks.count(id) != 0; }
  std::size_t size() const { return tasks.size(); }

  // Direct dependents (edges dep -> task).
  const std::vector<std::string>& children_of(const std::string& id) const;
  // ids in a deterministic topological order (ties by id).
  const std::vector<std::string>& topo_order() const { return topo_; }

  json to_json() const;
  static Workload from_json(const json& j);

 private:
  friend Workload build_workload(std::vector<TaskSpec> specs, std::string name);
  std::map<std::string, std::vector<std::string>> children_;
  std::vector<std::string> topo_;
};

enum class TaskState : std::uint8_t {
  Pending,
  Ready,
  Dispatched,
  Running,
  Succeeded,
  Failed,
  DepFailed,
  Terminated,
};

const char* to_string(TaskState s);
bool is_terminal(TaskState s);

enum class TaskEvent : std::uint8_t {
  MarkReady,
  Dispatch,
  Start,
  Succeed,
  Fail,
  RetryGranted,
  Terminate,     // Failed -> Terminated (budget exhausted / non-recoverable)
  Cancel,        // fail-fast: any non-terminal -> Terminated
  MarkDepFailed,
};

const char* to_string(TaskEvent e);

struct IllegalTransition : Error {
  IllegalTransition(TaskState s, TaskEvent e);
};

struct AttemptOutcome {
  bool success = false;
  std::string value_digest;                               // success only
  std::optional<resilience::FailureReport> failure;       // failure only
};

struct AttemptRecord {
  int attempt_index = 0;
  std::string pool_id, node_id, worker_id;
  std::int64_t start_us = 0;
  std::int64_t end_us = 0;
  std::optional<AttemptOutcome> outcome;  // open attempts have none yet
  int ladder_step = 0;                    // 0 = first (unhinted) placement
};

// Per-task execution history. Owned by the manager; mutation goes through
// transition().
struct TaskRecord {
  TaskSpec spec;
  TaskState state = TaskState::Pending;
  std::vector<AttemptRecord> attempts;
  int retries_used = 0;
  std::optional<std::string> dep_fail_root;  // set when state == DepFailed

  bool has_budget() const { return retries_used < spec.max_retries; }
};

// --- operations ---

Workload build_workload(std::vector<TaskSpec> specs, std::string name = "workload");

// Pending tasks whose deps are all Succeeded.
std::set<std::string> ready_tasks(const Workload& wl,
                                  const std::map<std::string, TaskRecord>& records);

// Transitive descendants of failed_id that are not yet terminal, each with
// the originating root-cause task id. Caller marks them DepFailed.
std::vector<std::pair<std::string, std::string>> propagate_dep_failure(
    const Workload& wl, const std::map<std::string, TaskRecord>& records,
    const std::string& failed_id);

// Applies one state-machine step; throws IllegalTransition for pairs outside
// the legal table. RetryGranted increments retries_used.
TaskRecord transition(TaskRecord record, TaskEvent event);

}  // namespace wrath::taskgraph
