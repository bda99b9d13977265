#include "cmllm/model/prompts.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cmllm/error.hpp"
#include "cmllm/model/tokenizer.hpp"
#include "cmllm/plant.hpp"

namespace cmllm::model {
namespace {

constexpr std::array<std::string_view, 4> kLabels = {"Task type", "Data scenario", "Role", "Task description"};

const std::string kScenario =
    "{length} steps at {resolution} minute resolution from a photovoltaic plant with battery storage, "
    "{variables} variables: {names}.";

std::string strip_placeholders(std::string_view text) {
  std::string out;
  bool inside = false;
  for (char c : text) {
    if (c == '{') inside = true;
    if (!inside) out += c;
    if (c == '}') inside = false;
  }
  return out;
}

std::string number(double v) { return fmt::format("{:g}", v); }

}  // namespace

std::string PromptTemplate::text() const {
  return fmt::format("{}: {} {}: {} {}: {} {}: {}", kLabels[0], task_type, kLabels[1], scenario, kLabels[2], role,
                     kLabels[3], description);
}

const PromptTemplate& builtin_template(TaskKind kind) {
  static const PromptTemplate imputation{
      "imputation of missing values.", kScenario, "you are a power system data analyst who restores lost measurements.",
      "cells marked -1 are missing segments of about {mu} steps with spread {sigma}; reconstruct them from the observed "
      "values and the causal graph between variables."};
  static const PromptTemplate forecast{
      "forecasting.", kScenario, "you are a power system forecaster.",
      "the last {horizon} steps of every variable are marked -1; predict them from the preceding history and the "
      "causal graph between variables."};
  static const PromptTemplate superres{
      "super resolution.", kScenario, "you are a power system data analyst who refines coarse measurements.",
      "only every {factor} th step is observed and the steps between are marked -1; recover the fine resolution "
      "series using the causal graph between variables."};
  switch (kind) {
    case TaskKind::Imputation: return imputation;
    case TaskKind::Forecast: return forecast;
    case TaskKind::SuperResolution: return superres;
  }
  throw InputError("unknown task kind");
}

PromptTemplate parse_template(std::string_view text) {
  std::array<std::string, 4> fields;
  std::array<bool, 4> seen{};
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    bool matched = false;
    for (std::size_t i = 0; i < kLabels.size(); ++i) {
      const std::string prefix = std::string(kLabels[i]) + ": ";
      if (line.rfind(prefix, 0) == 0) {
        if (seen[i]) throw InputError("template field '" + std::string(kLabels[i]) + "' given twice");
        fields[i] = line.substr(prefix.size());
        seen[i] = matched = true;
        break;
      }
    }
    if (!matched) throw InputError("unrecognized template line: " + line);
  }
  for (std::size_t i = 0; i < kLabels.size(); ++i) {
    if (!seen[i]) throw InputError("template lacks field '" + std::string(kLabels[i]) + "'");
  }
  return {fields[0], fields[1], fields[2], fields[3]};
}

PromptTemplate load_template_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt template '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_template(ss.str());
}

std::string format_template(const PromptTemplate& tpl) {
  return fmt::format("{}: {}\n{}: {}\n{}: {}\n{}: {}\n", kLabels[0], tpl.task_type, kLabels[1], tpl.scenario,
                     kLabels[2], tpl.role, kLabels[3], tpl.description);
}

std::string render(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '{') {
      out += text[i++];
      continue;
    }
    const std::size_t close = text.find('}', i);
    if (close == std::string_view::npos) throw InputError("unterminated placeholder in prompt template");
    const std::string key(text.substr(i + 1, close - i - 1));
    const auto it = values.find(key);
    if (it == values.end()) throw InputError("prompt template placeholder {" + key + "} has no value");
    out += it->second;
    i = close + 1;
  }
  return out;
}

std::map<std::string, std::string> prompt_values(const PromptContext& ctx) {
  std::string names;
  for (std::size_t i = 0; i < ctx.variable_names.size(); ++i) names += (i ? ", " : "") + ctx.variable_names[i];
  return {
      {"length", std::to_string(ctx.length)},
      {"resolution", std::to_string(ctx.resolution_minutes)},
      {"variables", std::to_string(ctx.variable_names.size())},
      {"names", names},
      {"mu", number(ctx.params.mu)},
      {"sigma", number(ctx.params.sigma)},
      {"horizon", std::to_string(ctx.params.horizon)},
      {"factor", std::to_string(ctx.params.factor)},
  };
}

std::string render_prompt(const PromptTemplate& tpl, const PromptContext& ctx) {
  return render(tpl.text(), prompt_values(ctx));
}

std::string render_prompt(const PromptContext& ctx) { return render_prompt(builtin_template(ctx.task), ctx); }

std::vector<std::string> template_corpus_tokens() {
  std::vector<std::string> out;
  for (TaskKind k : {TaskKind::Imputation, TaskKind::Forecast, TaskKind::SuperResolution}) {
    for (auto& t : split_tokens(strip_placeholders(builtin_template(k).text()))) out.push_back(std::move(t));
  }
  for (const auto& n : plant::variable_names()) out.push_back(n);
  for (char c = '0'; c <= '9'; ++c) out.emplace_back(1, c);
  for (const char* p : {".", ",", ":", ";", "-", "(", ")"}) out.emplace_back(p);
  return out;
}

}  // namespace cmllm::model
