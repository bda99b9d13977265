#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmllm/task.hpp"

namespace cmllm::train {

struct ManifestEntry {
  std::string csv;
  TaskKind task = TaskKind::Imputation;
  TaskParams params;
  std::string template_id;
};

/// Dataset listing. Relative csv and graph paths resolve against the
/// manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string prior_graph;
  std::string truth_graph;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Distinct csv paths in first-seen order.
std::vector<std::string> manifest_files(const DatasetManifest& m);

}  // namespace cmllm::train
