#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wrath/common.hpp"

namespace wrath::vcluster {

struct NodeConfig {
  std::string node_id;
  int memory_capacity_units = 1;
  std::set<std::string> installed_packages;
  int file_handle_limit = 32;
  bool init_failure = false;  // pilot job fails to start on this node

  json to_json() const;
  static NodeConfig from_json(const json& j);
};

struct PoolConfig {
  std::string pool_id;
  std::vector<NodeConfig> nodes;
  int workers_per_node = 1;

  json to_json() const;
  static PoolConfig from_json(const json& j);
};

struct ClusterTopology {
  std::vector<PoolConfig> pools;
  // Unhinted placements go to this pool (the "submission executor").
  // Defaults to the first pool.
  std::string default_pool;

  json to_json() const;
  static ClusterTopology from_json(const json& j);
  static ClusterTopology load_file(const std::string& path);
  void validate() const;
};

enum class Liveness { Alive, Killed, Unprovisioned };

// Live accounting for one virtual node. Owned by the runtime; monitoring
// samples it, the scheduler reads it.
struct NodeState {
  NodeConfig config;
  std::string pool_id;
  Liveness liveness = Liveness::Unprovisioned;
  int memory_in_use_units = 0;
  int open_files = 0;
  int worker_count = 0;
  std::set<std::pair<std::string, std::string>> running;  // (task_id, worker_id)
  bool denylisted = false;

  bool alive() const { return liveness == Liveness::Alive; }
  int free_memory_units() const { return config.memory_capacity_units - memory_in_use_units; }
};

// Immutable scheduling/retry view handed to the resilience engine.
struct NodeView {
  std::string pool_id;
  std::string node_id;
  bool alive = false;
  bool denylisted = false;
  int free_worker_slots = 0;
  int worker_slots = 0;
  int free_memory_units = 0;
  int memory_capacity_units = 0;
  int file_handle_limit = 0;
  std::set<std::string> installed_packages;
};

struct ClusterView {
  std::vector<NodeView> nodes;  // deterministic order: by (pool, node_id)
  std::string default_pool;

  const NodeView* find(const std::string& node_id) const;
  std::vector<const NodeView*> in_pool(const std::string& pool_id) const;
  std::vector<std::string> pool_ids() const;
};

struct UnknownNode : Error {
  explicit UnknownNode(const std::string& id) : Error("unknown node: " + id) {}
};

struct InitFailure : Error {
  std::vector<std::string> failed_nodes;
  explicit InitFailure(std::vector<std::string> nodes);
};

struct RestartFailed : Error {
  explicit RestartFailed(const std::string& id) : Error("restart failed for component: " + id) {}
};

}  // namespace wrath::vcluster
