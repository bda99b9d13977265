#pragma once

// Causal-guided multimodal model: prompt prefix + (time-series embedding +
// projected DGP embedding), a transformer backbone, slicing at the prompt
// length, and a linear projection back to the variables.

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmllm/model/dgp.hpp"
#include "cmllm/model/tokenizer.hpp"
#include "cmllm/nn/checkpoint.hpp"
#include "cmllm/nn/layers.hpp"

namespace cmllm::model {

struct CmModelConfig {
  int num_vars = 6;
  /// Longest time-series segment (L_fix).
  int max_ts_len = 96;
  int vocab_size = 0;
  std::uint32_t vocab_id = 0;
  nn::TransformerConfig backbone;
  DgpConfig dgp;
  bool use_prompt = true;
  bool use_causal = true;
  double token_std = 0.5;
  double position_std = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const CmModelConfig& c);
void from_json(const nlohmann::json& j, CmModelConfig& c);

/// Defaults sized for the built-in tokenizer, D_causal = D_hidden / 2 and
/// room for the longest built-in prompt ahead of `max_ts_len` steps.
CmModelConfig default_model_config(int num_vars, int max_ts_len, const Tokenizer& tok = Tokenizer::builtin());

template <typename T>
struct FusedInput {
  nn::Tensor<T> embedding;  // B x (L_txt + L_ts) x D
  int prompt_len = 0;
};

/// E_input = [E_txt ; E_ts + E'_causal] along the sequence axis.
template <typename T>
FusedInput<T> fuse(const nn::Tensor<T>& e_txt, const nn::Tensor<T>& e_ts, const nn::Tensor<T>& e_causal);

template <typename T>
struct SampleCache {
  nn::Mat<T> x;
  DgpCache<T> dgp;
  nn::Mat<T> e_causal;
  int prompt_len = 0;
  std::vector<int> prompt_ids;
  std::vector<nn::BlockCache<T>> blocks;
  nn::Mat<T> h_ts;
};

template <typename T>
class CmModel {
 public:
  CmModel() = default;
  static CmModel create(const CmModelConfig& cfg);
  /// Rebuilds the architecture from the checkpoint header and loads every array.
  static CmModel from_checkpoint(const nn::Checkpoint& ckpt);

  const CmModelConfig& config() const { return cfg_; }
  CmModelConfig& mutable_config() { return cfg_; }
  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }
  nn::Transformer<T>& backbone() { return backbone_; }
  const nn::Transformer<T>& backbone() const { return backbone_; }

  /// Prompt length fed to the backbone (0 when the prefix is switched off).
  int prefix_length(const PromptTokens& tokens) const { return cfg_.use_prompt ? static_cast<int>(tokens.size()) : 0; }

  // Batched component views, B leading.
  nn::Tensor<T> embed_prompt(const std::vector<PromptTokens>& prompts) const;
  nn::Tensor<T> embed_timeseries(const nn::Tensor<T>& x) const;
  nn::Tensor<T> dgp_propagate(const nn::Tensor<T>& x, const DgpAdjacency& adj) const;
  nn::Tensor<T> project_causal(const nn::Tensor<T>& e_causal) const;
  /// [B, L, F] masked input -> [B, L, F] reconstruction.
  nn::Tensor<T> model_forward(const nn::Tensor<T>& x, const std::vector<PromptTokens>& prompts,
                              const DgpAdjacency& adj) const;
  /// Backbone hidden states after slicing off the prompt, [B, L, D].
  nn::Tensor<T> sliced_hidden(const nn::Tensor<T>& x, const std::vector<PromptTokens>& prompts,
                              const DgpAdjacency& adj) const;
  nn::Tensor<T> project_output(const nn::Tensor<T>& h_ts) const;

  /// One sample, L x F in and out. `store` must share this model's layout.
  nn::Mat<T> forward(const nn::ParameterStore<T>& store, const nn::Mat<T>& x, const PromptTokens& prompt,
                     const DgpAdjacency& adj, SampleCache<T>& cache, const nn::ForwardContext& ctx = {}) const;
  nn::Mat<T> forward(const nn::Mat<T>& x, const PromptTokens& prompt, const DgpAdjacency& adj) const;
  void backward(const nn::ParameterStore<T>& store, const SampleCache<T>& cache, const nn::Mat<T>& dy,
                nn::GradientBuffer<T>& grads) const;

  nn::Checkpoint to_checkpoint(const nlohmann::json& extra = nlohmann::json::object()) const;

 private:
  nn::Mat<T> prompt_rows(const nn::ParameterStore<T>& store, const PromptTokens& prompt) const;
  void check_prompt(const PromptTokens& prompt) const;
  void check_input(const nn::Mat<T>& x) const;

  CmModelConfig cfg_;
  nn::ParameterStore<T> store_;
  nn::ParamId tok_;
  nn::ParamId pos_;
  nn::Linear<T> ts_embed_;
  DgpLayer<T> dgp_;
  nn::Linear<T> f_graph_;
  nn::Transformer<T> backbone_;
  nn::Linear<T> proj_;
};

}  // namespace cmllm::model
