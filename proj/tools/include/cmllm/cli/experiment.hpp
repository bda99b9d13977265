#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmllm/causal.hpp"
#include "cmllm/model/cm_model.hpp"
#include "cmllm/plant.hpp"
#include "cmllm/task.hpp"

namespace cmllm::cli {

enum class Ablation { None, PromptOnly, CausalOnly, Full };

Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);

struct DataSection {
  /// Generate days with `plant` when no csv inputs are listed.
  plant::PlantConfig plant;
  /// Generator seed given explicitly; otherwise the experiment seed drives the generator.
  bool plant_seed_set = false;
  int n_days = 200;
  /// CSV files or dataset manifests; relative paths resolve against the config file.
  std::vector<std::string> inputs;
  /// Trailing days kept out of training and used for the run report metrics.
  int holdout_days = 0;
};

struct ModelSection {
  int d_hidden = 32;
  int layers = 2;
  int heads = 4;
  int ff_dim = 64;
  int lora_rank = 8;
  double lora_scaling = 1.0;
  std::string attention = "causal";
  double dropout = 0.0;
  model::DgpConfig dgp{16, 0, true, model::DgpClosure::Transitive};  // d_causal 0 = d_hidden / 2
};

struct TrainingSection {
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 8;
  double lambda1 = 1.0;
  int l_fix = 96;
  bool truncate = false;
};

struct ExperimentConfig {
  std::optional<std::uint64_t> seed;
  DataSection data;
  std::vector<TaskKind> tasks{TaskKind::Imputation, TaskKind::Forecast, TaskKind::SuperResolution};
  TaskParams task_params;
  ModelSection model;
  TrainingSection training;
  Ablation ablation = Ablation::Full;
  causal::CiTestConfig discovery;
  /// Optional fixed graph JSON (skips discovery) and prior graph JSON.
  std::string graph;
  std::string prior;
  std::string output_dir = "out";
  int threads = 0;

  /// Raw bytes the config was read from (empty when built from defaults).
  std::string source_bytes;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  void validate() const;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& c);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Model architecture implied by the experiment for F variables and the
/// longest prompt in the dataset.
model::CmModelConfig model_config(const ExperimentConfig& c, int num_vars, int max_prompt_len);

/// 64-bit FNV-1a as 16 hex digits.
std::string config_hash(const std::string& bytes);

}  // namespace cmllm::cli
