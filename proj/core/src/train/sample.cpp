#include "cmllm/train/sample.hpp"

#include "cmllm/error.hpp"
#include "cmllm/model/prompts.hpp"

namespace cmllm::train {

void SftSample::validate() const {
  if (valid_length < 1 || valid_length > l_fix()) throw InputError("valid length must lie in [1, l_fix]");
  if (target.rows() != mask.rows() || target.cols() != mask.cols() || target.cols() != valid_length) {
    throw InputError("sample target and mask disagree in shape");
  }
  if (input.values.rows() != target.rows() || input.mask.rows() != target.rows()) {
    throw InputError("sample input and target differ in variable count");
  }
  for (Eigen::Index e = 0; e < target.rows(); ++e) {
    for (Eigen::Index t = 0; t < input.values.cols(); ++t) {
      const bool masked = t < valid_length ? mask.at(e, t) : false;
      if (masked && input.values(e, t) != kMaskSentinel) throw InputError("masked input cell is not -1");
    }
  }
}

SftSample build_sample(const TimeSeriesMatrix& day, TaskKind task, const TaskParams& params,
                       const causal::CausalGraph& graph, std::mt19937_64& rng, const SampleOptions& options,
                       const NormalizationParams& normalization, const model::Tokenizer& tokenizer) {
  if (!day.is_normalized) throw InputError("build_sample needs a normalized day");
  if (options.l_fix < 1) throw InputError("l_fix must be positive");
  day.validate();
  Eigen::Index L = day.length();
  if (L > options.l_fix) {
    if (!options.truncate) {
      throw InputError("day has " + std::to_string(L) + " steps, more than l_fix = " + std::to_string(options.l_fix) +
                       " (enable truncation to cut it)");
    }
    L = options.l_fix;
  }
  const Eigen::Index E = day.num_variables();
  TimeSeriesMatrix kept = day;
  kept.values = day.values.leftCols(L);

  SftSample s;
  s.task = task;
  s.params = params;
  s.graph = graph;
  s.valid_length = static_cast<int>(L);
  s.variable_names = day.variable_names;
  s.resolution_minutes = day.resolution_minutes;
  s.normalization = normalization;
  s.mask = generate_task_mask(task, params, E, L, rng());
  s.target = kept.values;
  const MaskedSeries masked = apply_mask(kept, s.mask);
  s.input.values = Matrix::Constant(E, options.l_fix, kMaskSentinel);
  s.input.values.leftCols(L) = masked.values;
  s.input.mask = MaskMatrix::zeros(E, options.l_fix);
  s.input.mask.values.leftCols(L) = s.mask.values;

  model::PromptContext ctx;
  ctx.task = task;
  ctx.params = params;
  ctx.resolution_minutes = day.resolution_minutes;
  ctx.length = static_cast<int>(L);
  ctx.variable_names = day.variable_names;
  s.prompt = model::render_prompt(ctx);
  s.tokens = tokenizer.tokenize(s.prompt);
  return s;
}

std::vector<SftSample> build_dataset(const std::vector<TimeSeriesMatrix>& raw_days, const std::vector<TaskKind>& tasks,
                                     const TaskParams& params, const causal::CausalGraph& graph,
                                     const SampleOptions& options, std::uint64_t seed) {
  if (tasks.empty()) throw InputError("dataset needs at least one task");
  std::mt19937_64 rng(seed);
  std::vector<SftSample> out;
  out.reserve(raw_days.size() * tasks.size());
  for (std::size_t d = 0; d < raw_days.size(); ++d) {
    const NormalizedSeries norm = instance_normalize(raw_days[d]);
    for (TaskKind task : tasks) {
      out.push_back(build_sample(norm.series, task, params, graph, rng, options, norm.params));
      out.back().day_index = d;
    }
  }
  return out;
}

void replace_mask(SftSample& sample, const MaskMatrix& mask) {
  if (mask.rows() != sample.target.rows() || mask.cols() != sample.valid_length) {
    throw InputError("mask is " + std::to_string(mask.rows()) + " x " + std::to_string(mask.cols()) + ", sample needs " +
                     std::to_string(sample.target.rows()) + " x " + std::to_string(sample.valid_length));
  }
  const Eigen::Index L = sample.valid_length;
  sample.mask = mask;
  for (Eigen::Index e = 0; e < mask.rows(); ++e) {
    for (Eigen::Index t = 0; t < L; ++t) {
      sample.input.values(e, t) = mask.at(e, t) ? kMaskSentinel : sample.target(e, t);
      sample.input.mask.values(e, t) = mask.values(e, t);
    }
  }
}

Matrix model_input(const SftSample& s) { return s.input.values.transpose(); }

}  // namespace cmllm::train
