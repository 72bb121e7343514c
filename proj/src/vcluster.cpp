#include "wrath/vcluster.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace wrath::vcluster {

json NodeConfig::to_json() const {
  json j{{"node_id", node_id},
         {"memory_capacity_units", memory_capacity_units},
         {"installed_packages", installed_packages},
         {"file_handle_limit", file_handle_limit}};
  if (init_failure) j["init_failure"] = true;
  return j;
}

NodeConfig NodeConfig::from_json(const json& j) {
  NodeConfig n;
  n.node_id = j.at("node_id").get<std::string>();
  n.memory_capacity_units = j.value("memory_capacity_units", 1);
  for (const auto& p : j.value("installed_packages", json::array()))
    n.installed_packages.insert(p.get<std::string>());
  n.file_handle_limit = j.value("file_handle_limit", 32);
  n.init_failure = j.value("init_failure", false);
  if (n.memory_capacity_units <= 0)
    throw ConfigError("node " + n.node_id + ": memory_capacity_units must be > 0");
  if (n.file_handle_limit <= 0)
    throw ConfigError("node " + n.node_id + ": file_handle_limit must be > 0");
  return n;
}

json PoolConfig::to_json() const {
  json nodes = json::array();
  for (const auto& n : this->nodes) nodes.push_back(n.to_json());
  return json{{"pool_id", pool_id}, {"workers_per_node", workers_per_node}, {"nodes", nodes}};
}

PoolConfig PoolConfig::from_json(const json& j) {
  PoolConfig p;
  p.pool_id = j.at("pool_id").get<std::string>();
  p.workers_per_node = j.value("workers_per_node", 1);
  if (p.workers_per_node <= 0)
    throw ConfigError("pool " + p.pool_id + ": workers_per_node must be > 0");
  for (const auto& n : j.at("nodes")) p.nodes.push_back(NodeConfig::from_json(n));
  if (p.nodes.empty()) throw ConfigError("pool " + p.pool_id + " has no nodes");
  return p;
}

json ClusterTopology::to_json() const {
  json pools = json::array();
  for (const auto& p : this->pools) pools.push_back(p.to_json());
  json j{{"pools", pools}};
  if (!default_pool.empty()) j["default_pool"] = default_pool;
  return j;
}

ClusterTopology ClusterTopology::from_json(const json& j) {
  ClusterTopology t;
  for (const auto& p : j.at("pools")) t.pools.push_back(PoolConfig::from_json(p));
  t.default_pool = j.value("default_pool", "");
  if (t.default_pool.empty() && !t.pools.empty()) t.default_pool = t.pools.front().pool_id;
  t.validate();
  return t;
}

ClusterTopology ClusterTopology::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open cluster topology file: " + path);
  json j;
  in >> j;
  return from_json(j);
}

void ClusterTopology::validate() const {
  if (pools.empty()) throw ConfigError("cluster topology has no pools");
  std::set<std::string> pool_ids, node_ids;
  bool default_found = false;
  for (const auto& p : pools) {
    if (!pool_ids.insert(p.pool_id).second)
      throw ConfigError("duplicate pool_id: " + p.pool_id);
    if (p.pool_id == default_pool) default_found = true;
    for (const auto& n : p.nodes)
      if (!node_ids.insert(n.node_id).second)
        throw ConfigError("duplicate node_id across cluster: " + n.node_id);
  }
  if (!default_pool.empty() && !default_found)
    throw ConfigError("default_pool '" + default_pool + "' not in topology");
}

const NodeView* ClusterView::find(const std::string& node_id) const {
  for (const auto& n : nodes)
    if (n.node_id == node_id) return &n;
  return nullptr;
}

std::vector<const NodeView*> ClusterView::in_pool(const std::string& pool_id) const {
  std::vector<const NodeView*> out;
  for (const auto& n : nodes)
    if (n.pool_id == pool_id) out.push_back(&n);
  return out;
}

std::vector<std::string> ClusterView::pool_ids() const {
  std::vector<std::string> out;
  for (const auto& n : nodes)
    if (out.empty() || out.back() != n.pool_id) {
      bool seen = false;
      for (const auto& p : out)
        if (p == n.pool_id) seen = true;
      if (!seen) out.push_back(n.pool_id);
    }
  return out;
}

InitFailure::InitFailure(std::vector<std::string> nodes)
    : Error([&nodes] {
        std::ostringstream os;
        os << "pilot job initialization failed on all nodes:";
        for (const auto& n : nodes) os << ' ' << n;
        return os.str();
      }()),
      failed_nodes(std::move(nodes)) {}

}  // namespace wrath::vcluster
