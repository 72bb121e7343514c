#include "wrath/resilience.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace wrath::resilience {

const char* to_string(Layer l) {
  switch (l) {
    case Layer::Application: return "application";
    case Layer::Framework: return "framework";
    case Layer::Runtime: return "runtime";
    case Layer::Environment: return "environment";
  }
  return "?";
}

const char* to_string(Cause c) {
  switch (c) {
    case Cause::ZeroDivision: return "zero_division";
    case Cause::RuntimeException: return "runtime_exception";
    case Cause::WorkerLost: return "worker_lost";
    case Cause::ManagerLost: return "manager_lost";
    case Cause::DependencyFailure: return "dependency_failure";
    case Cause::ResourceStarvation: return "resource_starvation";
    case Cause::PilotInitFailure: return "pilot_init_failure";
    case Cause::NodeShutdown: return "node_shutdown";
    case Cause::EnvMismatch: return "env_mismatch";
    case Cause::Unknown: return "unknown";
  }
  return "?";
}

const char* to_string(Detection d) {
  switch (d) {
    case Detection::FTL: return "FTL";
    case Detection::RP: return "RP";
    case Detection::FTL_RP: return "FTL+RP";
    case Detection::RC: return "RC";
  }
  return "?";
}

const char* to_string(ActionKind k) {
  switch (k) {
    case ActionKind::Terminate: return "terminate";
    case ActionKind::HierarchicalRetry: return "hierarchical_retry";
    case ActionKind::RestartComponent: return "restart_component";
    case ActionKind::GiveUp: return "give_up";
  }
  return "?";
}

json FailureClass::to_json() const {
  json j{{"layer", to_string(layer)},
         {"cause", to_string(cause)},
         {"retriable", retriable},
         {"detection", to_string(detection)}};
  if (starved) j["starved"] = resilience::to_string(*starved);
  if (!mentioned_packages.empty()) j["mentioned_packages"] = mentioned_packages;
  return j;
}

bool in_taxonomy(const FailureClass& c) {
  struct Row {
    Layer layer;
    Cause cause;
    bool retriable;
    Detection detection;
  };
  static const Row kRows[] = {
      {Layer::Application, Cause::ZeroDivision, false, Detection::FTL},
      {Layer::Application, Cause::RuntimeException, false, Detection::FTL},
      {Layer::Application, Cause::Unknown, true, Detection::RP},
      {Layer::Framework, Cause::WorkerLost, true, Detection::FTL},
      {Layer::Framework, Cause::ManagerLost, true, Detection::FTL},
      {Layer::Framework, Cause::DependencyFailure, true, Detection::RC},
      {Layer::Runtime, Cause::ResourceStarvation, true, Detection::RP},
      {Layer::Runtime, Cause::PilotInitFailure, true, Detection::RP},
      {Layer::Environment, Cause::NodeShutdown, true, Detection::FTL_RP},
      {Layer::Environment, Cause::EnvMismatch, true, Detection::FTL},
  };
  for (const auto& r : kRows)
    if (r.layer == c.layer && r.cause == c.cause && r.retriable == c.retriable &&
        r.detection == c.detection) {
      if (c.cause == Cause::ResourceStarvation && !c.starved) return false;
      return true;
    }
  return false;
}

json TaxonomyRule::to_json() const {
  json j{{"pattern", pattern},
         {"layer", to_string(layer)},
         {"cause", to_string(cause)},
         {"retriable", retriable},
         {"detection", to_string(detection)}};
  if (starved) j["starved"] = resilience::to_string(*starved);
  return j;
}

namespace {

Layer layer_from_string(const std::string& s) {
  if (s == "application") return Layer::Application;
  if (s == "framework") return Layer::Framework;
  if (s == "runtime") return Layer::Runtime;
  if (s == "environment") return Layer::Environment;
  throw ConfigError("unknown layer: " + s);
}

Cause cause_from_string(const std::string& s) {
  if (s == "zero_division") return Cause::ZeroDivision;
  if (s == "runtime_exception") return Cause::RuntimeException;
  if (s == "worker_lost") return Cause::WorkerLost;
  if (s == "manager_lost") return Cause::ManagerLost;
  if (s == "dependency_failure") return Cause::DependencyFailure;
  if (s == "resource_starvation") return Cause::ResourceStarvation;
  if (s == "pilot_init_failure") return Cause::PilotInitFailure;
  if (s == "node_shutdown") return Cause::NodeShutdown;
  if (s == "env_mismatch") return Cause::EnvMismatch;
  if (s == "unknown") return Cause::Unknown;
  throw ConfigError("unknown cause: " + s);
}

Detection detection_from_string(const std::string& s) {
  if (s == "FTL") return Detection::FTL;
  if (s == "RP") return Detection::RP;
  if (s == "FTL+RP") return Detection::FTL_RP;
  if (s == "RC") return Detection::RC;
  throw ConfigError("unknown detection strategy: " + s);
}

}  // namespace

TaxonomyRule TaxonomyRule::from_json(const json& j) {
  TaxonomyRule r;
  r.pattern = j.at("pattern").get<std::string>();
  r.layer = layer_from_string(j.at("layer").get<std::string>());
  r.cause = cause_from_string(j.at("cause").get<std::string>());
  r.retriable = j.at("retriable").get<bool>();
  r.detection = detection_from_string(j.at("detection").get<std::string>());
  if (j.contains("starved"))
    r.starved = j["starved"] == "memory" ? ResourceKind::Memory : ResourceKind::FileHandles;
  return r;
}

std::vector<TaxonomyRule> default_taxonomy_rules() {
  // Ordered; first match wins. Patterns are case-insensitive substrings
  // over the verbatim exception text.
  return {
      {"ZeroDivisionError|division by zero", Layer::Application, Cause::ZeroDivision, false,
       Detection::FTL, std::nullopt},
      {"\\bRuntimeError\\b", Layer::Application, Cause::RuntimeException, false, Detection::FTL,
       std::nullopt},
      {"ImportError|ModuleNotFoundError|No module named", Layer::Environment, Cause::EnvMismatch,
       true, Detection::FTL, std::nullopt},
      {"Too many open files|ulimit exceeded", Layer::Runtime, Cause::ResourceStarvation, true,
       Detection::RP, ResourceKind::FileHandles},
      {"MemoryError|OutOfMemoryError|out of memory|Cannot allocate memory", Layer::Runtime,
       Cause::ResourceStarvation, true, Detection::RP, ResourceKind::Memory},
      {"PilotInitError|pilot job failed|failed to initialize", Layer::Runtime,
       Cause::PilotInitFailure, true, Detection::RP, std::nullopt},
      {"[A-Za-z_]*(Error|Exception)\\b", Layer::Application, Cause::RuntimeException, false,
       Detection::FTL, std::nullopt},
  };
}

std::vector<TaxonomyRule> load_taxonomy_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open taxonomy rule file: " + path);
  json j;
  in >> j;
  std::vector<TaxonomyRule> rules;
  for (const auto& r : j) rules.push_back(TaxonomyRule::from_json(r));
  return rules;
}

void save_taxonomy_rules(const std::vector<TaxonomyRule>& rules, const std::string& path) {
  json j = json::array();
  for (const auto& r : rules) j.push_back(r.to_json());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write taxonomy rule file: " + path);
  out << j.dump(2) << '\n';
}

std::string Diagnosis::signature() const {
  std::ostringstream os;
  os << to_string(cls.cause);
  if (cls.starved) os << '/' << to_string(*cls.starved);
  if (resource_need) os << "/need=" << resource_need->amount;
  if (missing_packages) {
    os << "/missing=";
    for (const auto& p : *missing_packages) os << p << ',';
  }
  return os.str();
}

json Diagnosis::to_json() const {
  json j{{"class", cls.to_json()}, {"evidence", evidence}};
  if (resource_need)
    j["resource_need"] = {{"kind", to_string(resource_need->kind)},
                          {"amount", resource_need->amount}};
  if (missing_packages) j["missing_packages"] = *missing_packages;
  if (suspected_component) j["suspected_component"] = *suspected_component;
  return j;
}

json Action::to_json() const {
  json j{{"action", to_string(kind)}, {"reason", reason}};
  if (placement)
    j["placement"] = {{"ladder_step", placement->ladder_step},
                      {"pool_id", placement->pool_id},
                      {"node_id", placement->node_id}};
  if (!component.empty()) j["component"] = component;
  return j;
}

bool Denylist::add(const std::string& component, double at_ms, const std::string& reason) {
  auto [it, inserted] = entries_.emplace(component, DenylistEntry{at_ms, reason});
  return inserted;
}

bool Denylist::remove(const std::string& component, double at_ms, const std::string& reason) {
  if (entries_.erase(component) == 0) return false;
  removal_log_.push_back(json{{"component", component}, {"at_ms", at_ms}, {"reason", reason}});
  return true;
}

PolicyConfig PolicyConfig::from_json(const json& j) {
  PolicyConfig p;
  p.heartbeat_interval_ms = j.value("heartbeat_interval_ms", 500);
  p.miss_threshold = j.value("miss_threshold", 3);
  p.default_max_retries = j.value("default_max_retries", 3);
  p.starvation_threshold_pct = j.value("starvation_threshold_pct", 90.0);
  p.history_file = j.value("history_file", "");
  if (p.heartbeat_interval_ms <= 0) throw ConfigError("policy.heartbeat_interval_ms must be > 0");
  if (p.miss_threshold < 1) throw ConfigError("policy.miss_threshold must be >= 1");
  if (p.default_max_retries < 0) throw ConfigError("policy.default_max_retries must be >= 0");
  return p;
}

json PolicyConfig::to_json() const {
  return json{{"heartbeat_interval_ms", heartbeat_interval_ms},
              {"miss_threshold", miss_threshold},
              {"default_max_retries", default_max_retries},
              {"starvation_threshold_pct", starvation_threshold_pct},
              {"history_file", history_file}};
}

ResilienceEngine::ResilienceEngine(PolicyConfig policy, std::vector<TaxonomyRule> rules)
    : policy_(std::move(policy)), rules_(std::move(rules)) {
  for (const auto& r : rules_)
    compiled_.emplace_back(r.pattern, std::regex::ECMAScript | std::regex::icase);
}

void ResilienceEngine::reset_run_state() {
  ladder_memo_.clear();
  diagnosis_memo_.clear();
  pool_rr_cursor_ = 0;
  cost_ = {};
}

FailureClass ResilienceEngine::classify(const FailureReport& report) {
  cost_ = {};
  FailureClass out;

  if (report.dep_root) {
    cost_.classify_us = 5;
    out = {Layer::Framework, Cause::DependencyFailure, true, Detection::RC, std::nullopt, {}};
    return out;
  }

  if (report.kind == ManifestationKind::HeartbeatLoss ||
      report.kind == ManifestationKind::ComponentCrash) {
    cost_.classify_us = 5;
    const std::string& c = report.component;
    if (c.rfind("worker:", 0) == 0)
      out = {Layer::Framework, Cause::WorkerLost, true, Detection::FTL, std::nullopt, {}};
    else if (c.rfind("node:", 0) == 0)
      out = {Layer::Environment, Cause::NodeShutdown, true, Detection::FTL_RP, std::nullopt, {}};
    else
      out = {Layer::Framework, Cause::ManagerLost, true, Detection::FTL, std::nullopt, {}};
    return out;
  }

  if (report.kind == ManifestationKind::ResourceAnomaly) {
    cost_.classify_us = 5;
    ResourceKind rk = report.resource_request ? report.resource_request->kind
                                              : ResourceKind::Memory;
    out = {Layer::Runtime, Cause::ResourceStarvation, true, Detection::RP, rk, {}};
    return out;
  }

  // Failure taxonomy library: ordered first-match rules over exception text.
  std::size_t scanned = 0;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    ++scanned;
    if (std::regex_search(report.exception_text, compiled_[i])) {
      const TaxonomyRule& r = rules_[i];
      out = {r.layer, r.cause, r.retriable, r.detection, r.starved, {}};
      if (r.cause == Cause::EnvMismatch) {
        static const std::regex kModule("No module named '?\"?([A-Za-z0-9_.\\-]+)'?\"?",
                                        std::regex::icase);
        std::smatch m;
        if (std::regex_search(report.exception_text, m, kModule))
          out.mentioned_packages.insert(m[1].str());
      }
      cost_.classify_us = 5 + 2 * static_cast<std::int64_t>(scanned);
      return out;
    }
  }
  cost_.classify_us = 5 + 2 * static_cast<std::int64_t>(scanned);
  out = {Layer::Application, Cause::Unknown, true, Detection::RP, std::nullopt, {}};
  return out;
}

Diagnosis ResilienceEngine::analyze_root_cause(const FailureReport& report,
                                               const FailureClass& cls,
                                               const taskgraph::TaskSpec& spec,
                                               const monitoring::MonitoringStore& store,
                                               const vcluster::ClusterView& view) {
  Diagnosis diag;
  diag.cls = cls;

  double fail_ms = static_cast<double>(report.timestamp_us) / 1000.0;
  auto events = store.window(report.source, fail_ms - 2000.0, fail_ms);
  cost_.analyze_us = 10 + static_cast<std::int64_t>(events.size());
  for (const auto& ev : events) {
    std::ostringstream ref;
    ref << ev.source << '@' << ev.ts_ms;
    diag.evidence.push_back(ref.str());
  }

  std::string node_id = report.source;
  if (node_id.rfind("node:", 0) == 0) node_id = node_id.substr(5);
  const vcluster::NodeView* node = view.find(node_id);

  switch (cls.cause) {
    case Cause::ResourceStarvation: {
      ResourceRequest need{cls.starved.value_or(ResourceKind::Memory), 0};
      if (report.resource_request)
        need = *report.resource_request;
      else if (need.kind == ResourceKind::Memory)
        need.amount = spec.requirements.memory_units;
      else if (spec.requirements.max_open_files)
        need.amount = *spec.requirements.max_open_files;
      diag.resource_need = need;
      break;
    }
    case Cause::EnvMismatch: {
      std::set<std::string> missing;
      if (node)
        for (const auto& p : spec.requirements.packages)
          if (!node->installed_packages.count(p)) missing.insert(p);
      // An import failure not covered by the declared manifest cannot be
      // solved by relocation; decide() treats the empty set as
      // non-recoverable (application-layer).
      diag.missing_packages = missing;
      break;
    }
    case Cause::WorkerLost:
    case Cause::ManagerLost:
    case Cause::NodeShutdown:
      diag.suspected_component = report.component.empty() ? report.source : report.component;
      break;
    case Cause::DependencyFailure: {
      if (report.dep_root) {
        auto it = diagnosis_memo_.find(*report.dep_root);
        if (it != diagnosis_memo_.end()) {
          Diagnosis inherited = it->second;
          inherited.evidence.push_back("inherited from root cause task '" + *report.dep_root + "'");
          if (report.task_id) diagnosis_memo_[*report.task_id] = inherited;
          return inherited;
        }
      }
      // InsufficientEvidence: no recorded root diagnosis.
      diag.cls = {Layer::Application, Cause::Unknown, true, Detection::RP, std::nullopt, {}};
      break;
    }
    case Cause::Unknown: {
      // Resource analysis: peak in-use + requested demand against capacity.
      int requested = report.resource_request ? report.resource_request->amount
                                              : spec.requirements.memory_units;
      int peak = 0;
      bool saw_sample = false;
      for (const auto& ev : events)
        if (ev.kind == monitoring::EventKind::ResourceSample) {
          saw_sample = true;
          peak = std::max(peak, ev.body.value("memory_in_use_units", 0));
        }
      if (node && saw_sample) {
        double demand = static_cast<double>(peak + requested);
        if (demand >= policy_.starvation_threshold_pct / 100.0 * node->memory_capacity_units &&
            requested > 0) {
          diag.cls = {Layer::Runtime, Cause::ResourceStarvation, true, Detection::RP,
                      ResourceKind::Memory, {}};
          diag.resource_need = ResourceRequest{ResourceKind::Memory, requested};
        }
      }
      break;
    }
    default:
      break;
  }

  if (report.task_id) diagnosis_memo_[*report.task_id] = diag;
  return diag;
}

bool ResilienceEngine::feasible(const vcluster::NodeView& n, const Diagnosis& diag,
                                const taskgraph::TaskSpec& spec, const Denylist& denylist) const {
  if (!n.alive || n.denylisted) return false;
  if (denylist.contains("node:" + n.node_id) || denylist.contains(n.node_id)) return false;

  int mem_need = spec.requirements.memory_units;
  int fh_need = spec.requirements.max_open_files.value_or(0);
  if (diag.resource_need) {
    if (diag.resource_need->kind == ResourceKind::Memory)
      mem_need = std::max(mem_need, diag.resource_need->amount);
    else
      fh_need = std::max(fh_need, diag.resource_need->amount);
  }
  // Capacity-based fit: dispatch is admission-gated, so transiently busy
  // nodes queue rather than disqualify.
  if (n.memory_capacity_units < mem_need) return false;
  if (fh_need > 0 && n.file_handle_limit < fh_need) return false;

  for (const auto& p : spec.requirements.packages)
    if (!n.installed_packages.count(p)) return false;
  if (diag.missing_packages)
    for (const auto& p : *diag.missing_packages)
      if (!n.installed_packages.count(p)) return false;
  return true;
}

std::optional<Placement> ResilienceEngine::next_retry_target(
    const taskgraph::TaskRecord& record, const Diagnosis& diag, const vcluster::ClusterView& view,
    const Denylist& denylist, const monitoring::MonitoringStore& store) {
  const taskgraph::TaskSpec& spec = record.spec;
  std::string current_pool, failed_node;
  if (!record.attempts.empty()) {
    current_pool = record.attempts.back().pool_id;
    failed_node = record.attempts.back().node_id;
  }

  auto& memo = ladder_memo_[spec.id];
  int start_step = 1;
  std::string sig = diag.signature();
  if (memo.signature == sig) start_step = memo.last_step;
  memo.signature = sig;

  std::int64_t scanned = 0;
  auto pick = [&](std::vector<const vcluster::NodeView*> candidates,
                  bool prefer_current_pool) -> const vcluster::NodeView* {
    scanned += static_cast<std::int64_t>(candidates.size());
    std::erase_if(candidates, [&](const vcluster::NodeView* n) {
      return n->node_id == failed_node || !feasible(*n, diag, spec, denylist);
    });
    if (candidates.empty()) return nullptr;
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](const vcluster::NodeView* a, const vcluster::NodeView* b) {
                       if (prefer_current_pool) {
                         bool ac = a->pool_id == current_pool, bc = b->pool_id == current_pool;
                         if (ac != bc) return ac;
                       }
                       if (a->free_worker_slots != b->free_worker_slots)
                         return a->free_worker_slots > b->free_worker_slots;
                       return a->node_id < b->node_id;
                     });
    return candidates.front();
  };

  auto all_nodes = [&] {
    std::vector<const vcluster::NodeView*> v;
    for (const auto& n : view.nodes) v.push_back(&n);
    return v;
  };

  std::optional<Placement> result;
  for (int step = start_step; step <= 4 && !result; ++step) {
    switch (step) {
      case 1: {
        // Requirement-directed: only when the categorization supplied
        // concrete needs (resource amount or packages to match).
        if (!diag.resource_need && !(diag.missing_packages && !diag.missing_packages->empty()))
          break;
        if (const auto* n = pick(all_nodes(), /*prefer_current_pool=*/true))
          result = Placement{1, n->pool_id, n->node_id};
        break;
      }
      case 2: {
        if (current_pool.empty()) break;
        std::vector<const vcluster::NodeView*> v;
        for (const auto* n : view.in_pool(current_pool)) v.push_back(n);
        if (const auto* n = pick(std::move(v), false)) result = Placement{2, n->pool_id, n->node_id};
        break;
      }
      case 3: {
        auto history = monitoring::task_history(store, spec.kind);
        scanned += static_cast<std::int64_t>(history.size());
        const vcluster::NodeView* best = nullptr;
        monitoring::HistoryCounters best_c;
        for (const auto& [key, c] : history) {
          if (c.successes == 0) continue;
          const vcluster::NodeView* n = view.find(key.second);
          if (!n || n->pool_id != key.first) continue;
          if (n->node_id == failed_node || !feasible(*n, diag, spec, denylist)) continue;
          bool better = !best || c.successes > best_c.successes ||
                        (c.successes == best_c.successes &&
                         (c.failures < best_c.failures ||
                          (c.failures == best_c.failures && n->node_id < best->node_id)));
          if (better) {
            best = n;
            best_c = c;
          }
        }
        if (best) result = Placement{3, best->pool_id, best->node_id};
        break;
      }
      case 4: {
        auto pools = view.pool_ids();
        std::erase(pools, current_pool);
        if (pools.empty()) break;
        for (std::size_t i = 0; i < pools.size() && !result; ++i) {
          const std::string& pool = pools[(pool_rr_cursor_ + i) % pools.size()];
          std::vector<const vcluster::NodeView*> v;
          for (const auto* n : view.in_pool(pool)) v.push_back(n);
          if (const auto* n = pick(std::move(v), false)) {
            result = Placement{4, n->pool_id, n->node_id};
            pool_rr_cursor_ = (pool_rr_cursor_ + i + 1) % pools.size();
          }
        }
        break;
      }
    }
  }

  cost_.decide_us += scanned;
  if (result) {
    memo.last_step = result->ladder_step;
    memo.last_node = result->node_id;
  }
  return result;
}

Action ResilienceEngine::decide(const taskgraph::TaskRecord& record, const Diagnosis& diag,
                                const vcluster::ClusterView& view, const Denylist& denylist,
                                const monitoring::MonitoringStore& store) {
  cost_.decide_us += 5;
  const FailureClass& cls = diag.cls;

  // (a) Non-recoverable user failures terminate the task and the application.
  bool non_package_mismatch =
      cls.cause == Cause::EnvMismatch && (!diag.missing_packages || diag.missing_packages->empty());
  if (cls.cause == Cause::ZeroDivision || cls.cause == Cause::RuntimeException ||
      non_package_mismatch) {
    Action a;
    a.kind = ActionKind::Terminate;
    a.reason = std::string("non-recoverable ") + to_string(cls.layer) +
               " failure: " + to_string(cls.cause);
    if (non_package_mismatch) a.reason += " (not covered by declared package requirements)";
    return a;
  }

  // (e) Retry budget is charged per attempt regardless of ladder step.
  if (!record.has_budget()) {
    Action a;
    a.kind = ActionKind::GiveUp;
    a.reason = "budget_exhausted";
    return a;
  }

  // (b) Framework component failures: restart the component, then retry.
  if (cls.cause == Cause::WorkerLost || cls.cause == Cause::ManagerLost) {
    Action a;
    a.kind = ActionKind::RestartComponent;
    a.component = diag.suspected_component.value_or("");
    a.reason = std::string(to_string(cls.cause)) + ": restart then hierarchical retry";
    a.placement = next_retry_target(record, diag, view, denylist, store);
    if (!a.placement) {
      a.kind = ActionKind::GiveUp;
      a.reason = "no feasible retry target after component restart";
    }
    return a;
  }

  // (c)/(d) Recoverable failures: targeted hierarchical retry. Resource
  // diagnoses carry their need; shutdown diagnoses exclude the lost node.
  Action a;
  a.placement = next_retry_target(record, diag, view, denylist, store);
  if (a.placement) {
    a.kind = ActionKind::HierarchicalRetry;
    a.reason = std::string(to_string(cls.cause)) + " -> ladder step " +
               std::to_string(a.placement->ladder_step);
  } else {
    a.kind = ActionKind::GiveUp;
    a.reason = "no feasible retry target";
  }
  return a;
}

std::vector<json> ResilienceEngine::update_denylist(
    Denylist& denylist, const std::vector<monitoring::DetectorEvent>& events) {
  std::vector<json> log;
  for (const auto& ev : events) {
    if (ev.kind == monitoring::DetectorEvent::Suspected) {
      if (denylist.add(ev.component, ev.at_ms, "heartbeat loss"))
        log.push_back(json{{"denylist", "add"},
                           {"component", ev.component},
                           {"at_ms", ev.at_ms},
                           {"silent_ms", ev.silent_ms}});
    } else {
      if (denylist.remove(ev.component, ev.at_ms, "resumed communication"))
        log.push_back(
            json{{"denylist", "remove"}, {"component", ev.component}, {"at_ms", ev.at_ms}});
    }
  }
  return log;
}

}  // namespace wrath::resilience
