#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "cmllm/series.hpp"

namespace cmllm {

enum class TaskKind { Imputation, Forecast, SuperResolution };

std::string_view task_name(TaskKind kind);
/// Accepts "imputation", "forecast" and "superres".
TaskKind parse_task(std::string_view name);

struct TaskParams {
  double mu = 60.0;
  double sigma = 10.0;
  int segments_per_variable = 1;
  int horizon = 24;
  int factor = 3;

  void validate(TaskKind kind) const;
};

void to_json(nlohmann::json& j, const TaskParams& p);
void from_json(const nlohmann::json& j, TaskParams& p);

/// Mask for `kind` over an E x L series; imputation draws from `seed`.
MaskMatrix generate_task_mask(TaskKind kind, const TaskParams& params, Eigen::Index num_variables,
                              Eigen::Index length, std::uint64_t seed);

}  // namespace cmllm
