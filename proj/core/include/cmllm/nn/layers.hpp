#pragma once

// Layers with hand-written backward passes. Each layer holds ParamIds into a
// ParameterStore; forward takes an explicit cache that backward consumes, so
// one set of weights can serve concurrent forward/backward calls.

#include <random>
#include <string>
#include <vector>

#include "cmllm/nn/parameters.hpp"

namespace cmllm::nn {

/// Dropout needs randomness only while training; inference passes nullptr.
struct ForwardContext {
  std::mt19937_64* rng = nullptr;
  double dropout = 0.0;

  bool dropout_active() const { return rng != nullptr && dropout > 0.0; }
};

template <typename T>
struct Linear {
  ParamId weight;  // out x in
  ParamId bias;    // out
  int in = 0;
  int out = 0;

  static Linear create(ParameterStore<T>& store, const std::string& name, const std::string& group, int in, int out,
                       bool frozen);
  /// Uniform(+-bound) weights, zero bias.
  void init(ParameterStore<T>& store, double bound, std::mt19937_64& rng) const;

  Mat<T> forward(const ParameterStore<T>& store, const Mat<T>& x) const;
  /// Accumulates weight/bias gradients and returns d(loss)/dx.
  Mat<T> backward(const ParameterStore<T>& store, const Mat<T>& x, const Mat<T>& dy, GradientBuffer<T>& grads) const;
};

template <typename T>
struct LoraCache {
  Mat<T> x;
  Mat<T> xa;  // x A^T, N x r
};

/// y = x W0^T + b0 + scaling * (x A^T) B^T with W0/b0 frozen and A, B trainable.
template <typename T>
struct LoraLinear {
  ParamId w0;  // out x in
  ParamId b0;  // out
  ParamId a;   // r x in
  ParamId b;   // out x r
  int in = 0;
  int out = 0;
  int rank = 0;
  T scaling = T(1);
  /// When false the layer computes the frozen base map x W0^T + b0 only.
  bool enabled = true;

  static LoraLinear create(ParameterStore<T>& store, const std::string& name, int in, int out, int rank, T scaling);
  void init(ParameterStore<T>& store, double base_std, std::mt19937_64& rng) const;

  Mat<T> forward(const ParameterStore<T>& store, const Mat<T>& x, LoraCache<T>& cache) const;
  Mat<T> backward(const ParameterStore<T>& store, const LoraCache<T>& cache, const Mat<T>& dy,
                  GradientBuffer<T>& grads) const;
  /// W0 + scaling * B A.
  Mat<T> merged_weight(const ParameterStore<T>& store) const;
};

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

template <typename T>
struct LayerNorm {
  ParamId gamma;
  ParamId beta;
  int dim = 0;
  T eps = T(1e-5);

  static LayerNorm create(ParameterStore<T>& store, const std::string& name, const std::string& group, int dim,
                          bool frozen);
  Mat<T> forward(const ParameterStore<T>& store, const Mat<T>& x, LayerNormCache<T>& cache) const;
  Mat<T> backward(const ParameterStore<T>& store, const LayerNormCache<T>& cache, const Mat<T>& dy,
                  GradientBuffer<T>& grads) const;
};

enum class AttentionMask { Causal, Full };

template <typename T>
struct AttentionCache {
  LoraCache<T> q_cache, k_cache, v_cache, o_cache;
  Mat<T> q, k, v;
  std::vector<Mat<T>> probs;  // one S x S matrix per head
};

template <typename T>
struct MultiHeadAttention {
  LoraLinear<T> q, k, v, o;
  int heads = 1;
  int dim = 0;
  AttentionMask mask = AttentionMask::Causal;

  Mat<T> forward(const ParameterStore<T>& store, const Mat<T>& x, AttentionCache<T>& cache) const;
  Mat<T> backward(const ParameterStore<T>& store, const AttentionCache<T>& cache, const Mat<T>& dy,
                  GradientBuffer<T>& grads) const;
};

template <typename T>
struct FeedForwardCache {
  Mat<T> x;
  Mat<T> pre;  // x W1^T + b1
  Mat<T> act;  // gelu(pre)
};

template <typename T>
struct FeedForward {
  Linear<T> up;
  Linear<T> down;

  Mat<T> forward(const ParameterStore<T>& store, const Mat<T>& x, FeedForwardCache<T>& cache) const;
  Mat<T> backward(const ParameterStore<T>& store, const FeedForwardCache<T>& cache, const Mat<T>& dy,
                  GradientBuffer<T>& grads) const;
};

/// tanh approximation of GELU and its derivative.
template <typename T>
T gelu(T x);
template <typename T>
T gelu_grad(T x);

struct TransformerConfig {
  int layers = 2;
  int heads = 4;
  int d_hidden = 32;
  int ff_dim = 64;
  int max_seq_len = 512;
  AttentionMask attention = AttentionMask::Causal;
  double dropout = 0.0;
  int lora_rank = 8;
  double lora_scaling = 1.0;

  void validate() const;
};

template <typename T>
struct BlockCache {
  LayerNormCache<T> ln1, ln2;
  AttentionCache<T> attn;
  FeedForwardCache<T> ff;
  Mat<T> drop1, drop2;  // inverted-dropout multipliers, empty when inactive
};

/// Pre-norm block: x + attn(ln1(x)), then + ff(ln2(.)).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  FeedForward<T> ff;

  Mat<T> forward(const ParameterStore<T>& store, const Mat<T>& x, BlockCache<T>& cache,
                 const ForwardContext& ctx) const;
  Mat<T> backward(const ParameterStore<T>& store, const BlockCache<T>& cache, const Mat<T>& dy,
                  GradientBuffer<T>& grads) const;
};

/// Stack of blocks over one S x D sequence. Base weights are frozen; the
/// attention projections carry LoRA adapters.
template <typename T>
class Transformer {
 public:
  Transformer() = default;
  static Transformer create(ParameterStore<T>& store, const std::string& prefix, const TransformerConfig& cfg,
                            std::mt19937_64& rng);

  const TransformerConfig& config() const { return cfg_; }
  const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }
  void set_adapters_enabled(bool on);
  /// Folds every adapter into its W0 and zeroes B, leaving the forward map unchanged.
  void merge_adapters(ParameterStore<T>& store) const;

  Mat<T> forward(const ParameterStore<T>& store, const Mat<T>& x, std::vector<BlockCache<T>>& caches,
                 const ForwardContext& ctx = {}) const;
  Mat<T> backward(const ParameterStore<T>& store, const std::vector<BlockCache<T>>& caches, const Mat<T>& dy,
                  GradientBuffer<T>& grads) const;

  /// [B, S, D] -> [B, S, D], inference only.
  Tensor<T> forward(const ParameterStore<T>& store, const Tensor<T>& input) const;

 private:
  TransformerConfig cfg_;
  std::vector<TransformerBlock<T>> blocks_;
};

/// Affine map over the last axis: x[..., in] -> x W^T + b.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Mat<T>& weight, const Eigen::Matrix<T, 1, Eigen::Dynamic>& bias);

template <typename T>
struct LinearGrads {
  Tensor<T> dx;
  Mat<T> dweight;
  Eigen::Matrix<T, 1, Eigen::Dynamic> dbias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Mat<T>& weight, const Tensor<T>& dy);

}  // namespace cmllm::nn
