#include "cmllm/cli/experiment.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cmllm/error.hpp"
#include "cmllm/train/manifest.hpp"

namespace cmllm::cli {

Ablation parse_ablation(const std::string& name) {
  if (name == "none") return Ablation::None;
  if (name == "prompt") return Ablation::PromptOnly;
  if (name == "causal") return Ablation::CausalOnly;
  if (name == "full") return Ablation::Full;
  throw InputError("unknown ablation '" + name + "' (expected none, prompt, causal or full)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::PromptOnly: return "prompt";
    case Ablation::CausalOnly: return "causal";
    case Ablation::Full: return "full";
  }
  return "full";
}

std::filesystem::path ExperimentConfig::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

void ExperimentConfig::validate() const {
  if (!seed) throw InputError("experiment config needs a seed (set \"seed\" or pass --seed)");
  if (tasks.empty()) throw InputError("experiment config lists no tasks");
  for (TaskKind t : tasks) task_params.validate(t);
  if (data.inputs.empty()) {
    data.plant.validate();
    if (data.n_days < 1) throw InputError("data.n_days must be positive");
  }
  if (data.holdout_days < 0) throw InputError("data.holdout_days must be nonnegative");
  if (training.epochs < 0 || training.batch_size < 1 || training.l_fix < 1 || !(training.lr >= 0.0) ||
      !(training.lambda1 >= 0.0)) {
    throw InputError("training section has an out-of-range value");
  }
  if (model.attention != "causal" && model.attention != "full") {
    throw InputError("model.attention must be 'causal' or 'full'");
  }
  discovery.validate();
  if (threads < 0) throw InputError("threads must be nonnegative");
}

namespace {

template <typename V>
void read(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("generator")) {
        c.data.plant = d.at("generator").get<plant::PlantConfig>();
        c.data.plant_seed_set = d.at("generator").contains("seed");
      }
      read(d, "n_days", c.data.n_days);
      read(d, "inputs", c.data.inputs);
      read(d, "holdout_days", c.data.holdout_days);
    }
    if (j.contains("tasks")) {
      c.tasks.clear();
      for (const auto& t : j.at("tasks")) c.tasks.push_back(parse_task(t.get<std::string>()));
    }
    if (j.contains("task_params")) c.task_params = j.at("task_params").get<TaskParams>();
    if (j.contains("model")) {
      const auto& m = j.at("model");
      read(m, "d_hidden", c.model.d_hidden);
      read(m, "layers", c.model.layers);
      read(m, "heads", c.model.heads);
      read(m, "ff_dim", c.model.ff_dim);
      read(m, "lora_rank", c.model.lora_rank);
      read(m, "lora_scaling", c.model.lora_scaling);
      read(m, "attention", c.model.attention);
      read(m, "dropout", c.model.dropout);
      if (m.contains("dgp")) c.model.dgp = m.at("dgp").get<model::DgpConfig>();
      if (!m.contains("dgp") || !m.at("dgp").contains("d_causal")) c.model.dgp.d_causal = 0;
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      read(t, "epochs", c.training.epochs);
      read(t, "lr", c.training.lr);
      read(t, "batch_size", c.training.batch_size);
      read(t, "lambda1", c.training.lambda1);
      read(t, "l_fix", c.training.l_fix);
      read(t, "truncate", c.training.truncate);
    }
    if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
    if (j.contains("discovery")) {
      read(j.at("discovery"), "alpha", c.discovery.alpha);
      read(j.at("discovery"), "max_cond_set", c.discovery.max_cond_set);
    }
    read(j, "graph", c.graph);
    read(j, "prior", c.prior);
    read(j, "output_dir", c.output_dir);
    read(j, "threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad experiment config: ") + e.what());
  }
  return c;
}

nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  if (c.seed) j["seed"] = *c.seed;
  j["data"] = {{"generator", c.data.plant},
               {"n_days", c.data.n_days},
               {"inputs", c.data.inputs},
               {"holdout_days", c.data.holdout_days}};
  j["tasks"] = nlohmann::json::array();
  for (TaskKind t : c.tasks) j["tasks"].push_back(std::string(task_name(t)));
  j["task_params"] = c.task_params;
  j["model"] = {{"d_hidden", c.model.d_hidden},   {"layers", c.model.layers},
                {"heads", c.model.heads},         {"ff_dim", c.model.ff_dim},
                {"lora_rank", c.model.lora_rank}, {"lora_scaling", c.model.lora_scaling},
                {"attention", c.model.attention}, {"dropout", c.model.dropout},
                {"dgp", c.model.dgp}};
  j["training"] = {{"epochs", c.training.epochs},       {"lr", c.training.lr},
                   {"batch_size", c.training.batch_size}, {"lambda1", c.training.lambda1},
                   {"l_fix", c.training.l_fix},         {"truncate", c.training.truncate}};
  j["ablation"] = ablation_name(c.ablation);
  j["discovery"] = {{"alpha", c.discovery.alpha}, {"max_cond_set", c.discovery.max_cond_set}};
  j["graph"] = c.graph;
  j["prior"] = c.prior;
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  return j;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  ExperimentConfig c = experiment_from_json(j);
  c.source_bytes = ss.str();
  c.base_dir = path.parent_path();
  return c;
}

model::CmModelConfig model_config(const ExperimentConfig& c, int num_vars, int max_prompt_len) {
  model::CmModelConfig m = model::default_model_config(num_vars, c.training.l_fix);
  m.backbone.d_hidden = c.model.d_hidden;
  m.backbone.layers = c.model.layers;
  m.backbone.heads = c.model.heads;
  m.backbone.ff_dim = c.model.ff_dim;
  m.backbone.lora_rank = c.model.lora_rank;
  m.backbone.lora_scaling = c.model.lora_scaling;
  m.backbone.attention = c.model.attention == "full" ? nn::AttentionMask::Full : nn::AttentionMask::Causal;
  m.backbone.dropout = c.model.dropout;
  m.backbone.max_seq_len = c.training.l_fix + max_prompt_len + 32;
  m.dgp = c.model.dgp;
  if (m.dgp.d_causal <= 0) m.dgp.d_causal = std::max(1, c.model.d_hidden / 2);
  m.use_prompt = c.ablation == Ablation::PromptOnly || c.ablation == Ablation::Full;
  m.use_causal = c.ablation == Ablation::CausalOnly || c.ablation == Ablation::Full;
  m.seed = c.seed.value_or(0);
  return m;
}

std::string config_hash(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace cmllm::cli
