#pragma once

#include <vector>

#include "cmllm/nn/tensor.hpp"
#include "cmllm/train/sample.hpp"

namespace cmllm::train {

/// Samples stacked time-major. Inputs stay at l_fix; targets, masks and the
/// padding flags are padded to the longest valid length in the batch.
struct Batch {
  TaskKind task = TaskKind::Imputation;
  nn::Tensor<double> inputs;   // B x l_fix x F
  nn::Tensor<double> targets;  // B x max_length x F, zero in padding
  nn::Tensor<double> masks;    // B x max_length x F, 1 = cell to reconstruct
  nn::Tensor<double> padding;  // B x max_length x F, 1 = padded cell
  std::vector<int> valid_lengths;
  std::vector<model::PromptTokens> prompts;
  std::vector<const SftSample*> samples;
  int max_length = 0;

  std::size_t size() const { return valid_lengths.size(); }
};

/// Requires a nonempty list with one variable count, one l_fix and one task.
Batch collate(const std::vector<const SftSample*>& samples);
Batch collate(const std::vector<SftSample>& samples);

struct LossConfig {
  double lambda1 = 1.0;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double acc = 0.0;   // batch mean of L_acc
  double mask = 0.0;  // batch mean of L_mask
  std::vector<double> per_sample;
};

/// Per sample: L_acc = MSE over valid cells, L_mask = MSE over masked valid
/// cells (0 without any), total = L_acc + lambda1 * L_mask; the batch loss is
/// the sample mean. `pred` is B x Lp x F with Lp >= max_length. When `grad`
/// is given it receives d(total)/d(pred) in pred's shape.
template <typename T>
LossBreakdown compute_loss(const nn::Tensor<T>& pred, const Batch& batch, const LossConfig& cfg,
                           nn::Tensor<T>* grad = nullptr);

}  // namespace cmllm::train
