#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>

#include "wrath/common.hpp"
#include "wrath/taskgraph.hpp"

namespace wrath::vcluster {

// Exception raised by task bodies; the text is captured verbatim into the
// failure report (Python-style messages keep the taxonomy rules realistic).
struct TaskError : Error {
  using Error::Error;
};

// Thrown when a body kills its own worker; the supervisor turns it into a
// component-crash report rather than an exception-text one.
struct WorkerKilledSignal {};

// The body-facing view of the worker sandbox: dependency values, the node's
// package manifest, and simulated file-handle accounting.
class WorkerEnv {
 public:
  WorkerEnv(const taskgraph::TaskSpec& spec,
            const std::map<std::string, json>* values,
            const std::set<std::string>* node_packages,
            int node_file_limit, int* node_open_files)
      : spec_(spec),
        values_(values),
        node_packages_(node_packages),
        node_file_limit_(node_file_limit),
        node_open_files_(node_open_files) {}

  const taskgraph::TaskSpec& spec() const { return spec_; }

  const json& dep_value(const std::string& task_id) const;
  std::vector<json> dep_values() const;  // in spec.deps order

  bool has_package(const std::string& pkg) const {
    return node_packages_ && node_packages_->count(pkg) != 0;
  }
  void require_import(const std::string& pkg) const {
    if (!has_package(pkg)) throw TaskError("ImportError: No module named '" + pkg + "'");
  }

  // Opens n simulated file handles, held for the rest of the attempt.
  void open_files(int n);
  int opened_files() const { return opened_; }
  int requested_files() const { return requested_; }

  [[noreturn]] void kill_worker() const { throw WorkerKilledSignal{}; }

  // Invoke another registered function under this environment.
  json call(const std::string& fn, const json& args);

 private:
  const taskgraph::TaskSpec& spec_;
  const std::map<std::string, json>* values_;
  const std::set<std::string>* node_packages_;
  int node_file_limit_;
  int* node_open_files_;
  int opened_ = 0;
  int requested_ = 0;
};

using TaskFn = std::function<json(const json& args, WorkerEnv& env)>;

class TaskRegistry {
 public:
  void add(const std::string& name, TaskFn fn);
  const TaskFn& get(const std::string& name) const;
  bool contains(const std::string& name) const { return fns_.count(name) != 0; }

  // Registry with all builtin bodies (wordcount.*, cholesky.*, synth.*,
  // inject.*) pre-registered.
  static TaskRegistry& builtin();

 private:
  std::map<std::string, TaskFn> fns_;
};

void register_builtin_tasks(TaskRegistry& reg);

}  // namespace wrath::vcluster
