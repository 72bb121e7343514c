#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wrath/common.hpp"

namespace wrath::resilience {

enum class ManifestationKind { ExceptionText, HeartbeatLoss, ResourceAnomaly, ComponentCrash };

enum class ResourceKind { Memory, FileHandles };

inline const char* to_string(ResourceKind k) {
  return k == ResourceKind::Memory ? "memory" : "file_handles";
}

struct ResourceRequest {
  ResourceKind kind;
  int amount = 0;
};

// One observed failure, in whichever of the four forms it manifested.
// Exception text is preserved verbatim; the classifier pattern-matches it.
struct FailureReport {
  std::optional<std::string> task_id;  // absent for pure component failures
  std::string source;                  // component id (node:*, worker:*, pool:*, manager)
  ManifestationKind kind = ManifestationKind::ExceptionText;
  std::string exception_text;          // ExceptionText
  std::string component;               // HeartbeatLoss / ComponentCrash subject
  std::vector<json> sample_window;     // ResourceAnomaly evidence
  int attempt_index = 0;
  std::int64_t timestamp_us = 0;
  // Worker-side knowledge of what the attempt asked for; feeds root-cause
  // analysis (requested memory units, attempted open-file count).
  std::optional<ResourceRequest> resource_request;
  // Set on synthesized dependency-failure reports: id of the root-cause task.
  std::optional<std::string> dep_root;

  json to_json() const {
    json j{{"source", source}, {"attempt", attempt_index}, {"ts_us", timestamp_us}};
    switch (kind) {
      case ManifestationKind::ExceptionText:
        j["manifestation"] = "exception";
        j["text"] = exception_text;
        break;
      case ManifestationKind::HeartbeatLoss:
        j["manifestation"] = "heartbeat_loss";
        j["component"] = component;
        break;
      case ManifestationKind::ResourceAnomaly:
        j["manifestation"] = "resource_anomaly";
        break;
      case ManifestationKind::ComponentCrash:
        j["manifestation"] = "component_crash";
        j["component"] = component;
        break;
    }
    if (task_id) j["task_id"] = *task_id;
    if (dep_root) j["dep_root"] = *dep_root;
    if (resource_request)
      j["resource_request"] = {{"kind", to_string(resource_request->kind)},
                               {"amount", resource_request->amount}};
    return j;
  }
};

}  // namespace wrath::resilience
