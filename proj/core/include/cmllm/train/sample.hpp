#pragma once

#include <random>
#include <string>
#include <vector>

#include "cmllm/causal.hpp"
#include "cmllm/model/tokenizer.hpp"
#include "cmllm/series.hpp"
#include "cmllm/task.hpp"

namespace cmllm::train {

struct SampleOptions {
  /// Fixed model input length; shorter days are padded with -1 / mask 0.
  int l_fix = 96;
  /// Cut days longer than l_fix instead of rejecting them.
  bool truncate = false;
};

/// One supervised record: prompt, graph, masked input at l_fix, and the
/// normalized target with its mask over the valid prefix.
struct SftSample {
  TaskKind task = TaskKind::Imputation;
  TaskParams params;
  std::string prompt;
  model::PromptTokens tokens;
  causal::CausalGraph graph;
  MaskedSeries input;  // E x l_fix
  Matrix target;       // E x valid_length
  MaskMatrix mask;     // E x valid_length
  int valid_length = 0;
  NormalizationParams normalization;
  std::vector<std::string> variable_names;
  int resolution_minutes = 1;
  std::size_t day_index = 0;

  int num_variables() const { return static_cast<int>(target.rows()); }
  int l_fix() const { return static_cast<int>(input.values.cols()); }
  void validate() const;
};

/// `day` must be normalized; `normalization` is carried along for later
/// denormalization. Imputation masks draw their seed from `rng`.
SftSample build_sample(const TimeSeriesMatrix& day, TaskKind task, const TaskParams& params,
                       const causal::CausalGraph& graph, std::mt19937_64& rng, const SampleOptions& options = {},
                       const NormalizationParams& normalization = {},
                       const model::Tokenizer& tokenizer = model::Tokenizer::builtin());

/// Normalizes every raw day and builds one sample per (day, task), in day-major order.
std::vector<SftSample> build_dataset(const std::vector<TimeSeriesMatrix>& raw_days, const std::vector<TaskKind>& tasks,
                                     const TaskParams& params, const causal::CausalGraph& graph,
                                     const SampleOptions& options, std::uint64_t seed);

/// Swaps in a caller-provided mask (E x valid_length) and rebuilds the masked input.
void replace_mask(SftSample& sample, const MaskMatrix& mask);

/// Model input view of a sample: l_fix x E (time-major).
Matrix model_input(const SftSample& s);

}  // namespace cmllm::train
