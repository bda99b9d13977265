#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "cmllm/model/cm_model.hpp"
#include "cmllm/nn/adam.hpp"
#include "cmllm/train/batch.hpp"

namespace cmllm::train {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 8;
  nn::AdamConfig adam;
  LossConfig loss;
  std::uint64_t seed = 0;
  double dropout = 0.0;
  /// Workers for per-sample forward/backward; gradients are reduced in sample order.
  int threads = 1;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double acc = 0.0;
  double mask = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Index lists of one epoch: samples grouped by (task, prompt length),
/// shuffled inside each group, cut into batches, batch order shuffled.
std::vector<std::vector<std::size_t>> plan_batches(const std::vector<SftSample>& samples, int batch_size,
                                                   bool use_prompt, std::mt19937_64& rng);

/// Forward, loss and summed gradients for one batch. Exposed for tests.
template <typename T>
LossBreakdown batch_gradients(const model::CmModel<T>& model, const nn::ParameterStore<T>& store, const Batch& batch,
                              const std::vector<const model::DgpAdjacency*>& adjacency, const LossConfig& loss,
                              nn::GradientBuffer<T>* grads, int threads = 1, std::uint64_t dropout_seed = 0,
                              double dropout = 0.0);

/// Model predictions for a batch, B x l_fix x F.
template <typename T>
nn::Tensor<T> predict_batch(const model::CmModel<T>& model, const Batch& batch,
                            const std::vector<const model::DgpAdjacency*>& adjacency);

/// LoRA-only fine-tuning of `model` on `samples`. Throws NumericError when a
/// loss or gradient turns non-finite.
TrainResult train(model::CmModel<float>& model, const std::vector<SftSample>& samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Mean total loss over the `window` epochs ending at `epoch` (1-based).
double smoothed_loss(const std::vector<EpochStats>& history, int epoch, int window = 5);

void write_loss_history(const std::filesystem::path& path, const std::vector<EpochStats>& history);

/// Adjacency for each sample's graph, deduplicated.
struct AdjacencyTable {
  std::vector<model::DgpAdjacency> unique;
  std::vector<std::size_t> index;  // per sample

  const model::DgpAdjacency* at(std::size_t sample) const { return &unique[index[sample]]; }
};
AdjacencyTable build_adjacency(const std::vector<SftSample>& samples, const model::DgpConfig& cfg);

}  // namespace cmllm::train
