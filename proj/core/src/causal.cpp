#include "cmllm/causal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "cmllm/error.hpp"

namespace cmllm::causal {
namespace {

// R^2 above 1 - kDegenerateTol means the residual is numerically zero.
constexpr double kDegenerateTol = 1e-12;
constexpr double kRankThreshold = 1e-10;
constexpr double kOrientationTieEps = 1e-9;

struct Residuals {
  Eigen::VectorXd values;
  double total_ss = 0.0;  // centered sum of squares of the target
  bool rank_deficient = false;
};

// Residuals of data.col(target) after OLS on [1, data.col(z...)].
Residuals ols_residuals(const SampleMatrix& data, int target, std::span<const int> z) {
  const Eigen::Index n = data.rows();
  Residuals out;
  const Eigen::VectorXd y = data.col(target);
  out.values = y.array() - y.mean();
  out.total_ss = out.values.squaredNorm();
  if (z.empty()) return out;

  Eigen::MatrixXd design(n, static_cast<Eigen::Index>(z.size()));
  for (std::size_t j = 0; j < z.size(); ++j) {
    const auto col = data.col(z[j]);
    design.col(static_cast<Eigen::Index>(j)) = col.array() - col.mean();
  }
  // Scale columns so the rank threshold is relative to each covariate's size.
  for (Eigen::Index j = 0; j < design.cols(); ++j) {
    const double norm = design.col(j).norm();
    if (norm > 0.0) design.col(j) /= norm;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(kRankThreshold);
  out.rank_deficient = qr.rank() < design.cols();
  const Eigen::VectorXd beta = qr.solve(out.values);
  out.values -= design * beta;
  return out;
}

bool residual_vanishes(const Residuals& r) {
  return r.total_ss <= 0.0 || r.values.squaredNorm() <= kDegenerateTol * r.total_ss;
}

PartialCorrelation residual_correlation(const Residuals& ru, const Residuals& rv) {
  PartialCorrelation pc;
  if (residual_vanishes(ru) || residual_vanishes(rv)) {
    pc.degenerate = true;
    pc.r = 0.0;
    return pc;
  }
  const double r = ru.values.dot(rv.values) / std::sqrt(ru.values.squaredNorm() * rv.values.squaredNorm());
  pc.r = std::clamp(r, -1.0, 1.0);
  return pc;
}

void check_indices(const SampleMatrix& data, int u, int v, std::span<const int> z) {
  const auto E = static_cast<int>(data.cols());
  auto bad = [E](int i) { return i < 0 || i >= E; };
  if (bad(u) || bad(v)) throw InputError("variable index out of range");
  if (u == v) throw InputError("partial correlation requires distinct variables");
  for (int k : z) {
    if (bad(k)) throw InputError("conditioning index out of range");
    if (k == u || k == v) throw InputError("conditioning set must exclude the tested pair");
  }
}

void for_each_subset(const std::vector<int>& pool, int k, const std::function<bool(const std::vector<int>&)>& fn) {
  const int n = static_cast<int>(pool.size());
  if (k > n) return;
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::vector<int> subset(static_cast<std::size_t>(k));
  while (true) {
    for (int i = 0; i < k; ++i) subset[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    if (fn(subset)) return;
    int i = k - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) return;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
}

// Edges of one directed cycle, or empty if the graph is acyclic.
std::vector<std::size_t> find_cycle(int n, const std::vector<OrientedEdge>& edges) {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < edges.size(); ++i) out[static_cast<std::size_t>(edges[i].from)].push_back(i);
  std::vector<int> state(static_cast<std::size_t>(n), 0);  // 0 new, 1 on stack, 2 done
  std::vector<std::size_t> via(static_cast<std::size_t>(n), 0);
  std::vector<std::size_t> cycle;

  std::function<bool(int)> dfs = [&](int node) -> bool {
    state[static_cast<std::size_t>(node)] = 1;
    for (std::size_t ei : out[static_cast<std::size_t>(node)]) {
      const int next = edges[ei].to;
      if (state[static_cast<std::size_t>(next)] == 1) {
        cycle.push_back(ei);
        for (int cur = node; cur != next; cur = edges[via[static_cast<std::size_t>(cur)]].from) {
          cycle.push_back(via[static_cast<std::size_t>(cur)]);
        }
        return true;
      }
      if (state[static_cast<std::size_t>(next)] == 0) {
        via[static_cast<std::size_t>(next)] = ei;
        if (dfs(next)) return true;
      }
    }
    state[static_cast<std::size_t>(node)] = 2;
    return false;
  };
  for (int s = 0; s < n; ++s) {
    if (state[static_cast<std::size_t>(s)] == 0 && dfs(s)) break;
  }
  return cycle;
}

}  // namespace

void PriorGraph::validate() const {
  const auto n = static_cast<int>(nodes.size());
  std::set<std::pair<int, int>> seen;
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n) throw InputError("prior edge references an unknown node");
    if (u == v) throw InputError("prior graph contains a self-loop on '" + nodes[static_cast<std::size_t>(u)] + "'");
    if (!seen.insert({u, v}).second) throw InputError("duplicate prior edge");
    if (seen.count({v, u})) throw InputError("prior graph contains both directions of an edge");
  }
  if (!topological_order(n, edges)) throw InputError("prior graph is not acyclic");
}

bool PriorGraph::has_edge(int u, int v) const {
  return std::find(edges.begin(), edges.end(), std::make_pair(u, v)) != edges.end();
}

const DirectedEdge* CausalGraph::find(int from, int to) const {
  for (const auto& e : edges) {
    if (e.from == from && e.to == to) return &e;
  }
  return nullptr;
}

std::vector<int> CausalGraph::parents(int v) const {
  std::vector<int> p;
  for (const auto& e : edges) {
    if (e.to == v) p.push_back(e.from);
  }
  std::sort(p.begin(), p.end());
  return p;
}

int CausalGraph::index_of(const std::string& name) const {
  auto it = std::find(nodes.begin(), nodes.end(), name);
  return it == nodes.end() ? -1 : static_cast<int>(it - nodes.begin());
}

std::optional<std::vector<int>> topological_order(int n, std::span<const std::pair<int, int>> edges) {
  std::vector<int> indegree(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
  for (const auto& [u, v] : edges) {
    out[static_cast<std::size_t>(u)].push_back(v);
    ++indegree[static_cast<std::size_t>(v)];
  }
  std::vector<int> order;
  std::vector<int> ready;
  for (int i = n - 1; i >= 0; --i) {
    if (indegree[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
  }
  while (!ready.empty()) {
    const int u = ready.back();
    ready.pop_back();
    order.push_back(u);
    for (int v : out[static_cast<std::size_t>(u)]) {
      if (--indegree[static_cast<std::size_t>(v)] == 0) ready.push_back(v);
    }
  }
  if (static_cast<int>(order.size()) != n) return std::nullopt;
  return order;
}

bool is_acyclic(const CausalGraph& g) {
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : g.edges) edges.emplace_back(e.from, e.to);
  return topological_order(static_cast<int>(g.nodes.size()), edges).has_value();
}

void CiTestConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0,1)");
  if (max_cond_set < 0) throw InputError("max_cond_set must be nonnegative");
  if (!(r_clamp > 0.0 && r_clamp < 1.0)) throw InputError("r_clamp must lie in (0,1)");
}

PartialCorrelation partial_correlation(const SampleMatrix& data, int u, int v, std::span<const int> z) {
  check_indices(data, u, v, z);
  if (data.rows() < static_cast<Eigen::Index>(z.size()) + 2) throw InputError("too few samples for partial correlation");
  const Residuals ru = ols_residuals(data, u, z);
  if (ru.rank_deficient) throw NumericError("conditioning design matrix is rank deficient");
  const Residuals rv = ols_residuals(data, v, z);
  return residual_correlation(ru, rv);
}

double fisher_z_critical_value(double alpha) {
  const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, 1.0 - alpha / 2.0);
}

CiResult fisher_z_test(const SampleMatrix& data, int u, int v, std::span<const int> z, const CiTestConfig& cfg) {
  check_indices(data, u, v, z);
  const auto n = static_cast<double>(data.rows());
  const auto dof = n - static_cast<double>(z.size()) - 3.0;
  if (!(dof > 0.0)) {
    std::ostringstream os;
    os << "Fisher-Z test needs more than " << z.size() + 3 << " samples, got " << data.rows();
    throw InputError(os.str());
  }
  CiResult res;
  PartialCorrelation pc;
  try {
    pc = partial_correlation(data, u, v, z);
  } catch (const NumericError&) {
    res.singular = true;
    res.independent = false;
    res.p_value = 0.0;
    res.statistic = std::numeric_limits<double>::infinity();
    return res;
  }
  res.r = std::clamp(pc.r, -cfg.r_clamp, cfg.r_clamp);
  res.statistic = std::sqrt(dof) * std::abs(std::atanh(res.r));
  const boost::math::normal_distribution<double> standard;
  res.p_value = 2.0 * boost::math::cdf(boost::math::complement(standard, res.statistic));
  res.independent = res.statistic <= fisher_z_critical_value(cfg.alpha);
  return res;
}

std::vector<int> Skeleton::neighbors(int u) const {
  std::vector<int> out;
  for (int v = 0; v < num_nodes; ++v) {
    if (v != u && adjacency[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)]) out.push_back(v);
  }
  return out;
}

std::size_t Skeleton::num_edges() const {
  std::size_t count = 0;
  for (int u = 0; u < num_nodes; ++u) {
    for (int v = u + 1; v < num_nodes; ++v) count += adjacent(u, v) ? 1 : 0;
  }
  return count;
}

Skeleton discover_skeleton(const SampleMatrix& data, const PriorGraph& prior, const CiTestConfig& cfg) {
  cfg.validate();
  prior.validate();
  const auto E = static_cast<int>(data.cols());
  if (static_cast<int>(prior.nodes.size()) != E) {
    std::ostringstream os;
    os << "prior graph has " << prior.nodes.size() << " nodes but data has " << E << " variables";
    throw InputError(os.str());
  }
  if (E > 1 && data.rows() < cfg.max_cond_set + 4) {
    std::ostringstream os;
    os << "skeleton discovery needs at least " << cfg.max_cond_set + 4 << " samples, got " << data.rows();
    throw InputError(os.str());
  }

  Skeleton sk;
  sk.num_nodes = E;
  const auto uE = static_cast<std::size_t>(E);
  sk.adjacency.assign(uE, std::vector<bool>(uE, true));
  sk.prior.assign(uE, std::vector<bool>(uE, false));
  sk.sepsets.assign(uE, std::vector<std::vector<int>>(uE));
  for (std::size_t i = 0; i < uE; ++i) sk.adjacency[i][i] = false;
  for (const auto& [u, v] : prior.edges) {
    sk.prior[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] = true;
    sk.prior[static_cast<std::size_t>(v)][static_cast<std::size_t>(u)] = true;
  }

  for (int k = 0; k <= cfg.max_cond_set; ++k) {
    // PC-stable: conditioning candidates come from the adjacency at the start of the level.
    const Skeleton snapshot = sk;
    bool any_candidate = false;
    for (int u = 0; u < E; ++u) {
      for (int v = u + 1; v < E; ++v) {
        const auto su = static_cast<std::size_t>(u);
        const auto sv = static_cast<std::size_t>(v);
        if (!sk.adjacency[su][sv] || sk.prior[su][sv]) continue;
        std::set<std::vector<int>> tried;
        bool removed = false;
        for (int side : {u, v}) {
          std::vector<int> pool;
          for (int w : snapshot.neighbors(side)) {
            if (w != u && w != v) pool.push_back(w);
          }
          if (static_cast<int>(pool.size()) < k) continue;
          any_candidate = true;
          for_each_subset(pool, k, [&](const std::vector<int>& subset) {
            std::vector<int> key = subset;
            std::sort(key.begin(), key.end());
            if (!tried.insert(key).second) return false;
            const CiResult res = fisher_z_test(data, u, v, key, cfg);
            if (res.independent) {
              sk.adjacency[su][sv] = sk.adjacency[sv][su] = false;
              sk.sepsets[su][sv] = sk.sepsets[sv][su] = key;
              removed = true;
              return true;
            }
            return false;
          });
          if (removed) break;
        }
      }
    }
    if (!any_candidate) break;
  }
  return sk;
}

double regression_r2(const SampleMatrix& data, int target, std::span<const int> covariates) {
  const Residuals r = ols_residuals(data, target, covariates);
  if (r.total_ss <= 0.0) return 0.0;
  return std::clamp(1.0 - r.values.squaredNorm() / r.total_ss, 0.0, 1.0);
}

OrientedGraph orient_edges(const SampleMatrix& data, const Skeleton& skeleton, const PriorGraph& prior) {
  const int E = skeleton.num_nodes;
  if (static_cast<int>(prior.nodes.size()) != E) throw InputError("prior graph does not match skeleton size");
  OrientedGraph g;
  g.num_nodes = E;
  for (int u = 0; u < E; ++u) {
    for (int v = u + 1; v < E; ++v) {
      if (!skeleton.adjacent(u, v)) continue;
      if (prior.has_edge(u, v) || prior.has_edge(v, u)) {
        const bool forward = prior.has_edge(u, v);
        g.edges.push_back({forward ? u : v, forward ? v : u, true, 0.0});
        continue;
      }
      std::vector<int> cov_v{u};
      for (int w : skeleton.neighbors(v)) {
        if (w != u) cov_v.push_back(w);
      }
      std::vector<int> cov_u{v};
      for (int w : skeleton.neighbors(u)) {
        if (w != v) cov_u.push_back(w);
      }
      // u "predicts" v when v is better explained with u among its covariates.
      const double r2_into_v = regression_r2(data, v, cov_v);
      const double r2_into_u = regression_r2(data, u, cov_u);
      const double diff = r2_into_v - r2_into_u;
      bool u_to_v;
      if (std::abs(diff) < kOrientationTieEps) {
        u_to_v = prior.nodes[static_cast<std::size_t>(u)] < prior.nodes[static_cast<std::size_t>(v)];
      } else {
        u_to_v = diff > 0.0;
      }
      g.edges.push_back({u_to_v ? u : v, u_to_v ? v : u, false, std::abs(diff)});
    }
  }

  // Break cycles: reverse the weakest-margin non-prior edge in the cycle; an
  // edge already reversed once is dropped instead, which guarantees progress.
  std::vector<bool> reversed(g.edges.size(), false);
  std::vector<bool> alive(g.edges.size(), true);
  while (true) {
    std::vector<OrientedEdge> live;
    std::vector<std::size_t> live_index;
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
      if (alive[i]) {
        live.push_back(g.edges[i]);
        live_index.push_back(i);
      }
    }
    const auto cycle = find_cycle(E, live);
    if (cycle.empty()) break;
    std::optional<std::size_t> best_reverse;
    std::optional<std::size_t> best_drop;
    for (std::size_t li : cycle) {
      const std::size_t i = live_index[li];
      if (g.edges[i].prior) continue;
      auto better = [&](const std::optional<std::size_t>& cur) {
        return !cur || g.edges[i].margin < g.edges[*cur].margin ||
               (g.edges[i].margin == g.edges[*cur].margin && i < *cur);
      };
      if (!reversed[i] && better(best_reverse)) best_reverse = i;
      if (better(best_drop)) best_drop = i;
    }
    if (best_reverse) {
      std::swap(g.edges[*best_reverse].from, g.edges[*best_reverse].to);
      reversed[*best_reverse] = true;
      ++g.reversed_for_acyclicity;
    } else if (best_drop) {
      alive[*best_drop] = false;
      ++g.dropped_for_acyclicity;
    } else {
      throw InputError("prior edges form a cycle");
    }
  }
  std::vector<OrientedEdge> kept;
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    if (alive[i]) kept.push_back(g.edges[i]);
  }
  g.edges = std::move(kept);
  return g;
}

CausalGraph weight_edges(const SampleMatrix& data, const OrientedGraph& dag, const std::vector<std::string>& names) {
  if (static_cast<int>(names.size()) != dag.num_nodes) throw InputError("node name count does not match graph");
  std::vector<std::pair<int, int>> pairs;
  for (const auto& e : dag.edges) pairs.emplace_back(e.from, e.to);
  if (!topological_order(dag.num_nodes, pairs)) throw InputError("weight_edges requires an acyclic graph");

  CausalGraph g;
  g.nodes = names;
  for (const auto& e : dag.edges) {
    std::vector<int> z;
    for (const auto& other : dag.edges) {
      if (other.to == e.to && other.from != e.from) z.push_back(other.from);
    }
    std::sort(z.begin(), z.end());
    check_indices(data, e.from, e.to, z);
    const Residuals ru = ols_residuals(data, e.from, z);
    const Residuals rv = ols_residuals(data, e.to, z);
    const double w = std::abs(residual_correlation(ru, rv).r);
    g.edges.push_back({e.from, e.to, std::clamp(w, 0.0, 1.0), e.prior});
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const DirectedEdge& a, const DirectedEdge& b) {
    return std::tie(a.from, a.to) < std::tie(b.from, b.to);
  });
  return g;
}

CausalGraph discover(const SampleMatrix& data, const PriorGraph& prior, const CiTestConfig& cfg) {
  const Skeleton skeleton = discover_skeleton(data, prior, cfg);
  const OrientedGraph dag = orient_edges(data, skeleton, prior);
  CausalGraph g = weight_edges(data, dag, prior.nodes);
  if (!is_acyclic(g)) throw NumericError("causal discovery produced a cyclic graph");
  for (const auto& [u, v] : prior.edges) {
    if (!g.find(u, v)) throw NumericError("causal discovery lost a prior edge");
  }
  return g;
}

}  // namespace cmllm::causal
