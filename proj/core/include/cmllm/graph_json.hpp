#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "cmllm/causal.hpp"

namespace cmllm::causal {

// {"nodes": [...], "edges": [{"from", "to", "weight", "prior"}]}; prior graphs omit weights.
nlohmann::json to_json(const CausalGraph& g);
nlohmann::json to_json(const PriorGraph& g);
CausalGraph causal_graph_from_json(const nlohmann::json& j);
PriorGraph prior_graph_from_json(const nlohmann::json& j);

/// Prior edges (prior=true) of a full graph, as a PriorGraph.
PriorGraph prior_of(const CausalGraph& g);

void save_graph(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json load_graph_json(const std::filesystem::path& path);

}  // namespace cmllm::causal
