#include "cmllm/model/dgp.hpp"

#include "cmllm/error.hpp"

namespace cmllm::model {

void DgpConfig::validate() const {
  if (d_g < 1) throw InputError("DGP node dimension d_g must be at least 1");
  if (d_causal < 1) throw InputError("DGP output dimension d_causal must be at least 1");
}

void to_json(nlohmann::json& j, const DgpConfig& c) {
  j = {{"d_g", c.d_g},
       {"d_causal", c.d_causal},
       {"use_edge_weights", c.use_edge_weights},
       {"closure", c.closure == DgpClosure::Transitive ? "transitive" : "direct"}};
}

void from_json(const nlohmann::json& j, DgpConfig& c) {
  c.d_g = j.value("d_g", c.d_g);
  c.d_causal = j.value("d_causal", c.d_causal);
  c.use_edge_weights = j.value("use_edge_weights", c.use_edge_weights);
  const std::string closure = j.value("closure", std::string("transitive"));
  if (closure == "transitive") {
    c.closure = DgpClosure::Transitive;
  } else if (closure == "direct") {
    c.closure = DgpClosure::Direct;
  } else {
    throw InputError("DGP closure must be 'transitive' or 'direct', got '" + closure + "'");
  }
}

namespace {

Eigen::MatrixXd row_normalize(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double s = m.row(i).sum();
    if (s > 0.0) out.row(i) /= s;
  }
  return out;
}

}  // namespace

DgpAdjacency dgp_adjacency_from_closure(const Eigen::MatrixXd& ancestor_weights) {
  if (ancestor_weights.rows() != ancestor_weights.cols()) throw InputError("closure matrix must be square");
  return {row_normalize(ancestor_weights), row_normalize(ancestor_weights.transpose())};
}

DgpAdjacency dgp_adjacency(const causal::CausalGraph& graph, const std::vector<std::string>& variable_order,
                           const DgpConfig& cfg) {
  if (graph.nodes != variable_order) {
    throw InputError("causal graph nodes do not match the series variables in order");
  }
  const int n = static_cast<int>(graph.nodes.size());
  std::vector<std::pair<int, int>> pairs;
  for (const auto& e : graph.edges) pairs.emplace_back(e.from, e.to);
  const auto order = causal::topological_order(n, pairs);
  if (!order) throw InputError("causal graph contains a cycle");

  // direct(i, j): weight of edge j -> i.
  Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(n, n);
  for (const auto& e : graph.edges) direct(e.to, e.from) = cfg.use_edge_weights ? e.weight : 1.0;
  if (cfg.closure == DgpClosure::Direct) return dgp_adjacency_from_closure(direct);

  // Strongest path products, relaxing nodes in topological order so every
  // ancestor row is final before it is extended.
  Eigen::MatrixXd closure = Eigen::MatrixXd::Zero(n, n);
  for (int v : *order) {
    for (int u = 0; u < n; ++u) {
      const double w = direct(v, u);
      if (w == 0.0) continue;
      closure(v, u) = std::max(closure(v, u), w);
      for (int a = 0; a < n; ++a) closure(v, a) = std::max(closure(v, a), closure(u, a) * w);
    }
  }
  return dgp_adjacency_from_closure(closure);
}

template <typename T>
DgpLayer<T> DgpLayer<T>::create(nn::ParameterStore<T>& store, const std::string& name, int num_vars,
                                const DgpConfig& cfg) {
  cfg.validate();
  DgpLayer l;
  l.num_vars = num_vars;
  l.d_g = cfg.d_g;
  const auto dg = static_cast<std::size_t>(cfg.d_g);
  l.w_anc = store.add(name + ".w_anc", "dgp", {dg}, false);
  l.w_desc = store.add(name + ".w_desc", "dgp", {dg}, false);
  l.w_self = store.add(name + ".w_self", "dgp", {dg}, false);
  l.bias = store.add(name + ".bias", "dgp", {dg}, false);
  l.out = nn::Linear<T>::create(store, name + ".out", "dgp", num_vars * cfg.d_g, cfg.d_causal, false);
  return l;
}

template <typename T>
void DgpLayer<T>::init(nn::ParameterStore<T>& store, std::mt19937_64& rng) const {
  nn::init_uniform(store[w_anc].value, 1.0, rng);
  nn::init_uniform(store[w_desc].value, 1.0, rng);
  nn::init_uniform(store[w_self].value, 1.0, rng);
  store.mat(bias).setZero();
  out.init(store, 1.0 / std::sqrt(static_cast<double>(num_vars * d_g)), rng);
}

template <typename T>
nn::Mat<T> DgpLayer<T>::forward(const nn::ParameterStore<T>& store, const nn::Mat<T>& x, const DgpAdjacency& adj,
                                DgpCache<T>& cache) const {
  if (x.cols() != num_vars || adj.num_nodes() != num_vars) {
    throw InputError("DGP input has " + std::to_string(x.cols()) + " variables, graph has " +
                     std::to_string(adj.num_nodes()) + ", layer expects " + std::to_string(num_vars));
  }
  cache.x = x;
  cache.agg_anc.noalias() = x * adj.anc.cast<T>().transpose();
  cache.agg_desc.noalias() = x * adj.desc.cast<T>().transpose();
  const auto wa = store.mat(w_anc).row(0);
  const auto wd = store.mat(w_desc).row(0);
  const auto ws = store.mat(w_self).row(0);
  const auto b = store.mat(bias).row(0);
  cache.state.resize(x.rows(), num_vars * d_g);
  for (int i = 0; i < num_vars; ++i) {
    auto block = cache.state.middleCols(i * d_g, d_g);
    block.noalias() = cache.agg_anc.col(i) * wa;
    block.noalias() += cache.agg_desc.col(i) * wd;
    block.noalias() += x.col(i) * ws;
    block.rowwise() += b;
  }
  cache.state = cache.state.array().tanh().matrix();
  return out.forward(store, cache.state);
}

template <typename T>
void DgpLayer<T>::backward(const nn::ParameterStore<T>& store, const DgpCache<T>& cache, const nn::Mat<T>& dy,
                           nn::GradientBuffer<T>& grads) const {
  const nn::Mat<T> dstate = out.backward(store, cache.state, dy, grads);
  const nn::Mat<T> dpre = dstate.array() * (T(1) - cache.state.array().square());
  nn::Mat<T> gwa = nn::Mat<T>::Zero(1, d_g), gwd = gwa, gws = gwa, gb = gwa;
  for (int i = 0; i < num_vars; ++i) {
    const auto block = dpre.middleCols(i * d_g, d_g);
    gwa.noalias() += cache.agg_anc.col(i).transpose() * block;
    gwd.noalias() += cache.agg_desc.col(i).transpose() * block;
    gws.noalias() += cache.x.col(i).transpose() * block;
    gb += block.colwise().sum();
  }
  nn::accumulate(store, grads, w_anc, gwa);
  nn::accumulate(store, grads, w_desc, gwd);
  nn::accumulate(store, grads, w_self, gws);
  nn::accumulate(store, grads, bias, gb);
}

template struct DgpLayer<float>;
template struct DgpLayer<double>;

}  // namespace cmllm::model
