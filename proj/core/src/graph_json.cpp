#include "cmllm/graph_json.hpp"

#include <fstream>

#include "cmllm/error.hpp"

namespace cmllm::causal {
namespace {

int node_index(const std::vector<std::string>& nodes, const nlohmann::json& name) {
  if (!name.is_string()) throw InputError("graph edge endpoints must be node names");
  auto it = std::find(nodes.begin(), nodes.end(), name.get<std::string>());
  if (it == nodes.end()) throw InputError("graph edge references unknown node '" + name.get<std::string>() + "'");
  return static_cast<int>(it - nodes.begin());
}

std::vector<std::string> read_nodes(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("nodes") || !j["nodes"].is_array()) {
    throw InputError("graph JSON needs a \"nodes\" array");
  }
  std::vector<std::string> nodes;
  for (const auto& n : j["nodes"]) {
    if (!n.is_string()) throw InputError("graph node names must be strings");
    nodes.push_back(n.get<std::string>());
  }
  return nodes;
}

const nlohmann::json& read_edges(const nlohmann::json& j) {
  static const nlohmann::json empty = nlohmann::json::array();
  if (!j.contains("edges")) return empty;
  if (!j["edges"].is_array()) throw InputError("graph \"edges\" must be an array");
  return j["edges"];
}

}  // namespace

nlohmann::json to_json(const CausalGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges) {
    edges.push_back({{"from", g.nodes[static_cast<std::size_t>(e.from)]},
                     {"to", g.nodes[static_cast<std::size_t>(e.to)]},
                     {"weight", e.weight},
                     {"prior", e.prior}});
  }
  return {{"nodes", g.nodes}, {"edges", edges}};
}

nlohmann::json to_json(const PriorGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [u, v] : g.edges) {
    edges.push_back({{"from", g.nodes[static_cast<std::size_t>(u)]},
                     {"to", g.nodes[static_cast<std::size_t>(v)]},
                     {"prior", true}});
  }
  return {{"nodes", g.nodes}, {"edges", edges}};
}

CausalGraph causal_graph_from_json(const nlohmann::json& j) {
  CausalGraph g;
  g.nodes = read_nodes(j);
  for (const auto& e : read_edges(j)) {
    DirectedEdge edge;
    edge.from = node_index(g.nodes, e.value("from", nlohmann::json()));
    edge.to = node_index(g.nodes, e.value("to", nlohmann::json()));
    edge.weight = e.value("weight", 1.0);
    edge.prior = e.value("prior", false);
    if (!(edge.weight >= 0.0 && edge.weight <= 1.0)) throw InputError("edge weight must lie in [0,1]");
    g.edges.push_back(edge);
  }
  if (!is_acyclic(g)) throw InputError("graph JSON describes a cyclic graph");
  return g;
}

PriorGraph prior_graph_from_json(const nlohmann::json& j) {
  PriorGraph g;
  g.nodes = read_nodes(j);
  for (const auto& e : read_edges(j)) {
    g.edges.emplace_back(node_index(g.nodes, e.value("from", nlohmann::json())),
                         node_index(g.nodes, e.value("to", nlohmann::json())));
  }
  g.validate();
  return g;
}

PriorGraph prior_of(const CausalGraph& g) {
  PriorGraph p;
  p.nodes = g.nodes;
  for (const auto& e : g.edges) {
    if (e.prior) p.edges.emplace_back(e.from, e.to);
  }
  return p;
}

void save_graph(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

nlohmann::json load_graph_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("malformed graph JSON in '" + path.string() + "': " + e.what());
  }
}

}  // namespace cmllm::causal
