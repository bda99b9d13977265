#include "cmllm/train/manifest.hpp"

#include <algorithm>
#include <fstream>

#include "cmllm/error.hpp"

namespace cmllm::train {

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json::object();
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back(
        {{"csv", e.csv}, {"task", task_name(e.task)}, {"params", e.params}, {"template", e.template_id}});
  }
  if (!m.prior_graph.empty()) j["prior_graph"] = m.prior_graph;
  if (!m.truth_graph.empty()) j["truth_graph"] = m.truth_graph;
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.entries.clear();
  for (const auto& e : j.at("entries")) {
    ManifestEntry entry;
    entry.csv = e.at("csv").get<std::string>();
    entry.task = parse_task(e.at("task").get<std::string>());
    if (e.contains("params")) entry.params = e.at("params").get<TaskParams>();
    entry.template_id = e.value("template", std::string(task_name(entry.task)));
    m.entries.push_back(entry);
  }
  m.prior_graph = j.value("prior_graph", std::string());
  m.truth_graph = j.value("truth_graph", std::string());
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << nlohmann::json(m).dump(2) << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed manifest '" + path.string() + "': " + e.what());
  }
}

std::vector<std::string> manifest_files(const DatasetManifest& m) {
  std::vector<std::string> out;
  for (const auto& e : m.entries) {
    if (std::find(out.begin(), out.end(), e.csv) == out.end()) out.push_back(e.csv);
  }
  return out;
}

}  // namespace cmllm::train
