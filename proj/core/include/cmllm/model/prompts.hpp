#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cmllm/task.hpp"

namespace cmllm::model {

/// The four prompt fields. Each holds text with {name} placeholders.
struct PromptTemplate {
  std::string task_type;
  std::string scenario;
  std::string role;
  std::string description;

  std::string text() const;
};

const PromptTemplate& builtin_template(TaskKind kind);

/// Parses a template file: one "Field name: text" line per field
/// (Task type, Data scenario, Role, Task description).
PromptTemplate parse_template(std::string_view text);
PromptTemplate load_template_file(const std::filesystem::path& path);
std::string format_template(const PromptTemplate& tpl);

/// Substitutes every {name}. A placeholder without a value is an error.
std::string render(std::string_view text, const std::map<std::string, std::string>& values);

struct PromptContext {
  TaskKind task = TaskKind::Imputation;
  TaskParams params;
  int resolution_minutes = 1;
  int length = 0;
  std::vector<std::string> variable_names;
};

std::map<std::string, std::string> prompt_values(const PromptContext& ctx);
std::string render_prompt(const PromptTemplate& tpl, const PromptContext& ctx);
std::string render_prompt(const PromptContext& ctx);

/// Word list of every built-in template with placeholders removed, plus the
/// plant variable names, digits and punctuation the renderer can emit.
std::vector<std::string> template_corpus_tokens();

}  // namespace cmllm::model
