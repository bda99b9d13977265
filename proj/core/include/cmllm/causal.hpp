#pragma once

// Prior-constrained causal discovery over a multivariate sample matrix:
// PC-stable skeleton pruning with Fisher-Z tests (prior edges are never
// tested), R^2-based orientation, and partial-correlation edge weights.

#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace cmllm::causal {

/// n x E sample matrix, one column per variable.
using SampleMatrix = Eigen::MatrixXd;

struct DirectedEdge {
  int from = 0;
  int to = 0;
  double weight = 0.0;
  bool prior = false;

  friend bool operator==(const DirectedEdge&, const DirectedEdge&) = default;
};

/// Physics-derived directed acyclic unweighted graph.
struct PriorGraph {
  std::vector<std::string> nodes;
  std::vector<std::pair<int, int>> edges;

  /// Throws InputError on dangling indices, self-loops, duplicates or cycles.
  void validate() const;
  bool has_edge(int u, int v) const;
};

struct CausalGraph {
  std::vector<std::string> nodes;
  std::vector<DirectedEdge> edges;

  const DirectedEdge* find(int from, int to) const;
  bool adjacent(int u, int v) const { return find(u, v) || find(v, u); }
  std::vector<int> parents(int v) const;
  int index_of(const std::string& name) const;

  friend bool operator==(const CausalGraph&, const CausalGraph&) = default;
};

/// Topological order of a directed graph over `n` nodes, or nullopt on a cycle.
std::optional<std::vector<int>> topological_order(int n, std::span<const std::pair<int, int>> edges);
bool is_acyclic(const CausalGraph& g);

struct CiTestConfig {
  double alpha = 0.05;
  int max_cond_set = 2;
  double r_clamp = 1.0 - 1e-7;

  void validate() const;
};

struct PartialCorrelation {
  double r = 0.0;
  /// One endpoint is an exact linear function of the conditioning set, so
  /// its residual vanishes; r is reported as 0.
  bool degenerate = false;
};

/// Correlation of OLS residuals of u and v after regressing each on Z (with
/// intercept). Throws NumericError when the Z design is rank deficient.
PartialCorrelation partial_correlation(const SampleMatrix& data, int u, int v, std::span<const int> z);

struct CiResult {
  bool independent = false;
  double r = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;
  /// Conditioning design was singular; the pair is reported as dependent.
  bool singular = false;
};

CiResult fisher_z_test(const SampleMatrix& data, int u, int v, std::span<const int> z, const CiTestConfig& cfg);

/// Standard normal quantile at 1 - alpha/2.
double fisher_z_critical_value(double alpha);

/// Undirected skeleton with the separating set recorded for every removed pair.
struct Skeleton {
  int num_nodes = 0;
  std::vector<std::vector<bool>> adjacency;
  std::vector<std::vector<bool>> prior;
  std::vector<std::vector<std::vector<int>>> sepsets;

  bool adjacent(int u, int v) const { return adjacency[u][v]; }
  std::vector<int> neighbors(int u) const;
  std::size_t num_edges() const;
};

Skeleton discover_skeleton(const SampleMatrix& data, const PriorGraph& prior, const CiTestConfig& cfg);

struct OrientedEdge {
  int from = 0;
  int to = 0;
  bool prior = false;
  /// |R^2(to | from, ...) - R^2(from | to, ...)|; 0 for prior edges.
  double margin = 0.0;
};

struct OrientedGraph {
  int num_nodes = 0;
  std::vector<OrientedEdge> edges;
  /// Edges reversed (or dropped) to break cycles, for diagnostics.
  int reversed_for_acyclicity = 0;
  int dropped_for_acyclicity = 0;
};

/// R^2 of regressing `target` on `covariates` with intercept. Collinear
/// covariates are tolerated (the projection is unique).
double regression_r2(const SampleMatrix& data, int target, std::span<const int> covariates);

OrientedGraph orient_edges(const SampleMatrix& data, const Skeleton& skeleton, const PriorGraph& prior);

CausalGraph weight_edges(const SampleMatrix& data, const OrientedGraph& dag, const std::vector<std::string>& names);

/// Skeleton, orientation and weighting in sequence. Deterministic in its inputs.
CausalGraph discover(const SampleMatrix& data, const PriorGraph& prior, const CiTestConfig& cfg);

}  // namespace cmllm::causal
