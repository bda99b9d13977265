#include "cmllm/task.hpp"

#include "cmllm/error.hpp"

namespace cmllm {

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Imputation: return "imputation";
    case TaskKind::Forecast: return "forecast";
    case TaskKind::SuperResolution: return "superres";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view name) {
  if (name == "imputation") return TaskKind::Imputation;
  if (name == "forecast") return TaskKind::Forecast;
  if (name == "superres") return TaskKind::SuperResolution;
  throw InputError("unknown task '" + std::string(name) + "' (expected imputation, forecast or superres)");
}

void TaskParams::validate(TaskKind kind) const {
  switch (kind) {
    case TaskKind::Imputation:
      if (!(mu >= 0.0) || !(sigma >= 0.0)) throw InputError("imputation mu and sigma must be nonnegative");
      if (segments_per_variable < 0) throw InputError("segments_per_variable must be nonnegative");
      break;
    case TaskKind::Forecast:
      if (horizon < 0) throw InputError("forecast horizon must be nonnegative");
      break;
    case TaskKind::SuperResolution:
      if (factor < 1) throw InputError("super-resolution factor must be at least 1");
      break;
  }
}

void to_json(nlohmann::json& j, const TaskParams& p) {
  j = {{"mu", p.mu},
       {"sigma", p.sigma},
       {"segments_per_variable", p.segments_per_variable},
       {"horizon", p.horizon},
       {"factor", p.factor}};
}

void from_json(const nlohmann::json& j, TaskParams& p) {
  p.mu = j.value("mu", p.mu);
  p.sigma = j.value("sigma", p.sigma);
  p.segments_per_variable = j.value("segments_per_variable", p.segments_per_variable);
  p.horizon = j.value("horizon", p.horizon);
  p.factor = j.value("factor", p.factor);
}

MaskMatrix generate_task_mask(TaskKind kind, const TaskParams& params, Eigen::Index num_variables,
                              Eigen::Index length, std::uint64_t seed) {
  params.validate(kind);
  switch (kind) {
    case TaskKind::Imputation:
      return gen_mask_imputation(num_variables, length,
                                 ImputationMaskConfig{params.mu, params.sigma, params.segments_per_variable, seed});
    case TaskKind::Forecast:
      return gen_mask_forecast(num_variables, length, std::min<Eigen::Index>(params.horizon, length));
    case TaskKind::SuperResolution:
      return gen_mask_superres(num_variables, length, params.factor);
  }
  throw InputError("unknown task kind");
}

}  // namespace cmllm
