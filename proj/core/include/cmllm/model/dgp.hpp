#pragma once

// Dense graph propagation over the variables of one timestep. Every variable
// is a node whose feature is its (masked) scalar value; messages arrive
// separately from ancestors and from descendants, each row-normalized.

#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmllm/causal.hpp"
#include "cmllm/nn/layers.hpp"

namespace cmllm::model {

enum class DgpClosure { Transitive, Direct };

struct DgpConfig {
  int d_g = 16;
  int d_causal = 16;
  bool use_edge_weights = true;
  DgpClosure closure = DgpClosure::Transitive;

  void validate() const;
};

void to_json(nlohmann::json& j, const DgpConfig& c);
void from_json(const nlohmann::json& j, DgpConfig& c);

/// Row-normalized F x F operators: anc(i, j) > 0 iff j is an ancestor of i.
struct DgpAdjacency {
  Eigen::MatrixXd anc;
  Eigen::MatrixXd desc;

  int num_nodes() const { return static_cast<int>(anc.rows()); }
};

/// Ancestor/descendant operators for `graph`, whose nodes must equal
/// `variable_order`. With edge weights on, a closure entry carries the
/// largest product of weights over the paths that connect the pair.
DgpAdjacency dgp_adjacency(const causal::CausalGraph& graph, const std::vector<std::string>& variable_order,
                           const DgpConfig& cfg);
/// Operators built from explicit unnormalized F x F path weights (row i lists
/// the ancestors of i).
DgpAdjacency dgp_adjacency_from_closure(const Eigen::MatrixXd& ancestor_weights);

template <typename T>
struct DgpCache {
  nn::Mat<T> x;
  nn::Mat<T> agg_anc;
  nn::Mat<T> agg_desc;
  nn::Mat<T> state;  // L x (F * d_g), tanh output
};

template <typename T>
struct DgpLayer {
  nn::ParamId w_anc, w_desc, w_self, bias;  // each 1 x d_g
  nn::Linear<T> out;                         // F * d_g -> d_causal
  int num_vars = 0;
  int d_g = 0;

  static DgpLayer create(nn::ParameterStore<T>& store, const std::string& name, int num_vars, const DgpConfig& cfg);
  void init(nn::ParameterStore<T>& store, std::mt19937_64& rng) const;

  /// x: L x F masked series -> L x d_causal.
  nn::Mat<T> forward(const nn::ParameterStore<T>& store, const nn::Mat<T>& x, const DgpAdjacency& adj,
                     DgpCache<T>& cache) const;
  void backward(const nn::ParameterStore<T>& store, const DgpCache<T>& cache, const nn::Mat<T>& dy,
                nn::GradientBuffer<T>& grads) const;
};

}  // namespace cmllm::model
