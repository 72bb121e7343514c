#include "wrath/taskgraph.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

namespace wrath::taskgraph {

json RequirementManifest::to_json() const {
  json j{{"memory_units", memory_units}, {"packages", packages}};
  if (max_open_files) j["max_open_files"] = *max_open_files;
  return j;
}

RequirementManifest RequirementManifest::from_json(const json& j) {
  RequirementManifest m;
  m.memory_units = j.value("memory_units", 0);
  if (m.memory_units < 0) throw ConfigError("requirements.memory_units must be >= 0");
  for (const auto& p : j.value("packages", json::array())) {
    std::string name = p.get<std::string>();
    if (name.empty()) throw ConfigError("empty package name in requirements");
    m.packages.insert(name);
  }
  if (j.contains("max_open_files") && !j["max_open_files"].is_null()) {
    m.max_open_files = j["max_open_files"].get<int>();
    if (*m.max_open_files < 0) throw ConfigError("requirements.max_open_files must be >= 0");
  }
  return m;
}

json TaskSpec::to_json() const {
  return json{{"id", id},     {"kind", kind},       {"fn", fn},
              {"args", args}, {"deps", deps},       {"requirements", requirements.to_json()},
              {"max_retries", max_retries}};
}

TaskSpec TaskSpec::from_json(const json& j) {
  TaskSpec t;
  t.id = j.at("id").get<std::string>();
  t.kind = j.value("kind", "task");
  t.fn = j.at("fn").get<std::string>();
  t.args = j.value("args", json::object());
  for (const auto& d : j.value("deps", json::array())) t.deps.push_back(d.get<std::string>());
  if (j.contains("requirements")) t.requirements = RequirementManifest::from_json(j["requirements"]);
  t.max_retries = j.value("max_retries", 3);
  if (t.max_retries < 0) throw ConfigError("max_retries must be >= 0 for task " + t.id);
  return t;
}

CycleError::CycleError(std::vector<std::string> c)
    : Error([&c] {
        std::ostringstream os;
        os << "dependency cycle: ";
        for (std::size_t i = 0; i < c.size(); ++i) os << (i ? " -> " : "") << c[i];
        return os.str();
      }()),
      cycle(std::move(c)) {}

UnknownDependency::UnknownDependency(std::string t, std::string m)
    : Error("task '" + t + "' depends on unknown task '" + m + "'"),
      task_id(std::move(t)),
      missing(std::move(m)) {}

const TaskSpec& Workload::at(const std::string& id) const {
  auto it = tasks.find(id);
  if (it == tasks.end()) throw UnknownTask(id);
  return it->second;
}

const std::vector<std::string>& Workload::children_of(const std::string& id) const {
  static const std::vector<std::string> kEmpty;
  auto it = children_.find(id);
  return it == children_.end() ? kEmpty : it->second;
}

json Workload::to_json() const {
  json arr = json::array();
  for (const auto& id : topo_) arr.push_back(tasks.at(id).to_json());
  return json{{"name", name}, {"tasks", arr}};
}

Workload Workload::from_json(const json& j) {
  std::vector<TaskSpec> specs;
  for (const auto& t : j.at("tasks")) specs.push_back(TaskSpec::from_json(t));
  return build_workload(std::move(specs), j.value("name", "workload"));
}

Workload build_workload(std::vector<TaskSpec> specs, std::string name) {
  Workload wl;
  wl.name = std::move(name);
  for (auto& s : specs) {
    if (s.max_retries < 0) throw ConfigError("max_retries must be >= 0 for task " + s.id);
    if (!wl.tasks.emplace(s.id, s).second) throw ConfigError("duplicate task id: " + s.id);
  }
  for (const auto& [id, s] : wl.tasks) {
    for (const auto& d : s.deps) {
      if (!wl.tasks.count(d)) throw UnknownDependency(id, d);
      wl.children_[d].push_back(id);
    }
  }
  for (auto& [id, kids] : wl.children_) std::sort(kids.begin(), kids.end());

  // Kahn's algorithm over id-sorted tasks: detects cycles and yields a
  // deterministic topological order.
  std::map<std::string, int> indeg;
  for (const auto& [id, s] : wl.tasks) indeg[id] = static_cast<int>(s.deps.size());
  std::deque<std::string> frontier;
  for (const auto& [id, d] : indeg)
    if (d == 0) frontier.push_back(id);
  while (!frontier.empty()) {
    std::string id = frontier.front();
    frontier.pop_front();
    wl.topo_.push_back(id);
    for (const auto& c : wl.children_of(id))
      if (--indeg[c] == 0) frontier.push_back(c);
  }
  if (wl.topo_.size() != wl.tasks.size()) {
    // Walk the unresolved subgraph to surface one concrete cycle.
    std::string start;
    for (const auto& [id, d] : indeg)
      if (d > 0) {
        start = id;
        break;
      }
    std::vector<std::string> path;
    std::set<std::string> seen;
    std::string cur = start;
    while (!seen.count(cur)) {
      seen.insert(cur);
      path.push_back(cur);
      for (const auto& d : wl.tasks.at(cur).deps)
        if (indeg[d] > 0) {
          cur = d;
          break;
        }
    }
    auto it = std::find(path.begin(), path.end(), cur);
    std::vector<std::string> cycle(it, path.end());
    std::sort(cycle.begin(), cycle.end());
    throw CycleError(std::move(cycle));
  }
  return wl;
}

std::set<std::string> ready_tasks(const Workload& wl,
                                  const std::map<std::string, TaskRecord>& records) {
  std::set<std::string> out;
  for (const auto& [id, spec] : wl.tasks) {
    auto it = records.find(id);
    if (it == records.end()) throw UnknownTask(id);
    if (it->second.state != TaskState::Pending) continue;
    bool ok = true;
    for (const auto& d : spec.deps)
      if (records.at(d).state != TaskState::Succeeded) {
        ok = false;
        break;
      }
    if (ok) out.insert(id);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> propagate_dep_failure(
    const Workload& wl, const std::map<std::string, TaskRecord>& records,
    const std::string& failed_id) {
  if (!wl.contains(failed_id)) throw UnknownTask(failed_id);
  auto rec = records.find(failed_id);
  std::string root = failed_id;
  if (rec != records.end() && rec->second.dep_fail_root) root = *rec->second.dep_fail_root;

  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> visited{failed_id};
  std::deque<std::string> frontier{failed_id};
  while (!frontier.empty()) {
    std::string cur = frontier.front();
    frontier.pop_front();
    for (const auto& child : wl.children_of(cur)) {
      if (!visited.insert(child).second) continue;
      frontier.push_back(child);
      auto it = records.find(child);
      if (it != records.end() && is_terminal(it->second.state)) continue;
      out.emplace_back(child, root);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

const char* to_string(TaskState s) {
  switch (s) {
    case TaskState::Pending: return "Pending";
    case TaskState::Ready: return "Ready";
    case TaskState::Dispatched: return "Dispatched";
    case TaskState::Running: return "Running";
    case TaskState::Succeeded: return "Succeeded";
    case TaskState::Failed: return "Failed";
    case TaskState::DepFailed: return "DepFailed";
    case TaskState::Terminated: return "Terminated";
  }
  return "?";
}

bool is_terminal(TaskState s) {
  return s == TaskState::Succeeded || s == TaskState::DepFailed || s == TaskState::Terminated;
}

const char* to_string(TaskEvent e) {
  switch (e) {
    case TaskEvent::MarkReady: return "MarkReady";
    case TaskEvent::Dispatch: return "Dispatch";
    case TaskEvent::Start: return "Start";
    case TaskEvent::Succeed: return "Succeed";
    case TaskEvent::Fail: return "Fail";
    case TaskEvent::RetryGranted: return "RetryGranted";
    case TaskEvent::Terminate: return "Terminate";
    case TaskEvent::Cancel: return "Cancel";
    case TaskEvent::MarkDepFailed: return "MarkDepFailed";
  }
  return "?";
}

IllegalTransition::IllegalTransition(TaskState s, TaskEvent e)
    : Error(std::string("illegal transition: state=") + taskgraph::to_string(s) +
            " event=" + taskgraph::to_string(e)) {}

TaskRecord transition(TaskRecord record, TaskEvent event) {
  const TaskState s = record.state;
  switch (event) {
    case TaskEvent::MarkReady:
      if (s != TaskState::Pending) throw IllegalTransition(s, event);
      record.state = TaskState::Ready;
      return record;
    case TaskEvent::Dispatch:
      if (s != TaskState::Ready) throw IllegalTransition(s, event);
      record.state = TaskState::Dispatched;
      return record;
    case TaskEvent::Start:
      if (s != TaskState::Dispatched) throw IllegalTransition(s, event);
      record.state = TaskState::Running;
      return record;
    case TaskEvent::Succeed:
      if (s != TaskState::Running) throw IllegalTransition(s, event);
      record.state = TaskState::Succeeded;
      return record;
    case TaskEvent::Fail:
      if (s != TaskState::Running && s != TaskState::Dispatched)
        throw IllegalTransition(s, event);
      record.state = TaskState::Failed;
      return record;
    case TaskEvent::RetryGranted:
      if (s != TaskState::Failed) throw IllegalTransition(s, event);
      if (record.retries_used >= record.spec.max_retries)
        throw IllegalTransition(s, event);  // budget invariant holds at all times
      record.retries_used += 1;
      record.state = TaskState::Dispatched;
      return record;
    case TaskEvent::Terminate:
      if (s != TaskState::Failed) throw IllegalTransition(s, event);
      record.state = TaskState::Terminated;
      return record;
    case TaskEvent::Cancel:
      if (is_terminal(s)) throw IllegalTransition(s, event);
      record.state = TaskState::Terminated;
      return record;
    case TaskEvent::MarkDepFailed:
      if (s != TaskState::Pending) throw IllegalTransition(s, event);
      record.state = TaskState::DepFailed;
      return record;
  }
  throw IllegalTransition(s, event);
}

}  // namespace wrath::taskgraph
