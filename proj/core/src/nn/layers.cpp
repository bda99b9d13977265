#include "cmllm/nn/layers.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace cmllm::nn {

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& name, const std::string& group, int in,
                            int out, bool frozen) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", group, {static_cast<std::size_t>(out), static_cast<std::size_t>(in)}, frozen);
  l.bias = store.add(name + ".bias", group, {static_cast<std::size_t>(out)}, frozen);
  return l;
}

template <typename T>
void Linear<T>::init(ParameterStore<T>& store, double bound, std::mt19937_64& rng) const {
  init_uniform(store[weight].value, bound, rng);
  store.mat(bias).setZero();
}

template <typename T>
Mat<T> Linear<T>::forward(const ParameterStore<T>& store, const Mat<T>& x) const {
  if (x.cols() != in) throw InputError("linear input width mismatch");
  Mat<T> y(x.rows(), out);
  y.noalias() = x * store.mat(weight).transpose();
  y.rowwise() += store.mat(bias).row(0);
  return y;
}

template <typename T>
Mat<T> Linear<T>::backward(const ParameterStore<T>& store, const Mat<T>& x, const Mat<T>& dy,
                           GradientBuffer<T>& grads) const {
  accumulate(store, grads, weight, dy.transpose() * x);
  accumulate(store, grads, bias, dy.colwise().sum());
  Mat<T> dx(dy.rows(), in);
  dx.noalias() = dy * store.mat(weight);
  return dx;
}

// ------------------------------------------------------------ LoraLinear

template <typename T>
LoraLinear<T> LoraLinear<T>::create(ParameterStore<T>& store, const std::string& name, int in, int out, int rank,
                                    T scaling) {
  if (rank < 1 || rank > std::min(in, out)) {
    throw InputError("LoRA rank must lie in [1, min(d, k)] for '" + name + "'");
  }
  LoraLinear l;
  l.in = in;
  l.out = out;
  l.rank = rank;
  l.scaling = scaling;
  const auto uin = static_cast<std::size_t>(in);
  const auto uout = static_cast<std::size_t>(out);
  const auto ur = static_cast<std::size_t>(rank);
  l.w0 = store.add(name + ".w0", "backbone", {uout, uin}, true);
  l.b0 = store.add(name + ".b0", "backbone", {uout}, true);
  l.a = store.add(name + ".lora_a", "lora", {ur, uin}, false);
  l.b = store.add(name + ".lora_b", "lora", {uout, ur}, false);
  return l;
}

template <typename T>
void LoraLinear<T>::init(ParameterStore<T>& store, double base_std, std::mt19937_64& rng) const {
  init_normal(store[w0].value, base_std, rng);
  store.mat(b0).setZero();
  init_normal(store[a].value, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  store.mat(b).setZero();
}

template <typename T>
Mat<T> LoraLinear<T>::forward(const ParameterStore<T>& store, const Mat<T>& x, LoraCache<T>& cache) const {
  if (x.cols() != in) throw InputError("LoRA input width mismatch");
  cache.x = x;
  Mat<T> y(x.rows(), out);
  y.noalias() = x * store.mat(w0).transpose();
  y.rowwise() += store.mat(b0).row(0);
  if (enabled) {
    cache.xa.noalias() = x * store.mat(a).transpose();
    y.noalias() += scaling * (cache.xa * store.mat(b).transpose());
  }
  return y;
}

template <typename T>
Mat<T> LoraLinear<T>::backward(const ParameterStore<T>& store, const LoraCache<T>& cache, const Mat<T>& dy,
                               GradientBuffer<T>& grads) const {
  accumulate(store, grads, w0, dy.transpose() * cache.x);
  accumulate(store, grads, b0, dy.colwise().sum());
  if (!enabled) return dy * store.mat(w0);
  accumulate(store, grads, b, scaling * (dy.transpose() * cache.xa));
  Mat<T> dxa(dy.rows(), rank);
  dxa.noalias() = scaling * (dy * store.mat(b));
  accumulate(store, grads, a, dxa.transpose() * cache.x);
  Mat<T> dx(dy.rows(), in);
  dx.noalias() = dy * store.mat(w0);
  dx.noalias() += dxa * store.mat(a);
  return dx;
}

template <typename T>
Mat<T> LoraLinear<T>::merged_weight(const ParameterStore<T>& store) const {
  Mat<T> w = store.mat(w0);
  w.noalias() += scaling * (store.mat(b) * store.mat(a));
  return w;
}

// ------------------------------------------------------------- LayerNorm

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParameterStore<T>& store, const std::string& name, const std::string& group,
                                  int dim, bool frozen) {
  LayerNorm ln;
  ln.dim = dim;
  ln.gamma = store.add(name + ".gamma", group, {static_cast<std::size_t>(dim)}, frozen);
  ln.beta = store.add(name + ".beta", group, {static_cast<std::size_t>(dim)}, frozen);
  store.mat(ln.gamma).setOnes();
  return ln;
}

template <typename T>
Mat<T> LayerNorm<T>::forward(const ParameterStore<T>& store, const Mat<T>& x, LayerNormCache<T>& cache) const {
  const Eigen::Index n = x.rows();
  cache.xhat.resize(n, dim);
  cache.inv_std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).matrix();
    const T var = centered.squaredNorm() / static_cast<T>(dim);
    const T inv = T(1) / std::sqrt(var + eps);
    cache.inv_std(i) = inv;
    cache.xhat.row(i) = centered * inv;
  }
  Mat<T> y = cache.xhat.array().rowwise() * store.mat(gamma).row(0).array();
  y.rowwise() += store.mat(beta).row(0);
  return y;
}

template <typename T>
Mat<T> LayerNorm<T>::backward(const ParameterStore<T>& store, const LayerNormCache<T>& cache, const Mat<T>& dy,
                              GradientBuffer<T>& grads) const {
  accumulate(store, grads, gamma, (dy.array() * cache.xhat.array()).matrix().colwise().sum());
  accumulate(store, grads, beta, dy.colwise().sum());
  const Mat<T> dxhat = dy.array().rowwise() * store.mat(gamma).row(0).array();
  Mat<T> dx(dy.rows(), dim);
  const T d = static_cast<T>(dim);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T sum_dxhat = dxhat.row(i).sum();
    const T sum_dxhat_xhat = dxhat.row(i).dot(cache.xhat.row(i));
    dx.row(i) = (cache.inv_std(i) / d) *
                (d * dxhat.row(i).array() - sum_dxhat - cache.xhat.row(i).array() * sum_dxhat_xhat).matrix();
  }
  return dx;
}

// ---------------------------------------------------- MultiHeadAttention

template <typename T>
Mat<T> MultiHeadAttention<T>::forward(const ParameterStore<T>& store, const Mat<T>& x,
                                      AttentionCache<T>& cache) const {
  const Eigen::Index S = x.rows();
  const int dh = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  cache.q = q.forward(store, x, cache.q_cache);
  cache.k = k.forward(store, x, cache.k_cache);
  cache.v = v.forward(store, x, cache.v_cache);
  cache.probs.resize(static_cast<std::size_t>(heads));
  Mat<T> concat(S, dim);
  for (int h = 0; h < heads; ++h) {
    const auto qh = cache.q.middleCols(h * dh, dh);
    const auto kh = cache.k.middleCols(h * dh, dh);
    const auto vh = cache.v.middleCols(h * dh, dh);
    Mat<T>& p = cache.probs[static_cast<std::size_t>(h)];
    p.noalias() = scale * (qh * kh.transpose());
    for (Eigen::Index i = 0; i < S; ++i) {
      const Eigen::Index visible = mask == AttentionMask::Causal ? i + 1 : S;
      auto row = p.row(i).head(visible);
      const T mx = row.maxCoeff();
      row = (row.array() - mx).exp().matrix();
      row /= row.sum();
      if (visible < S) p.row(i).tail(S - visible).setZero();
    }
    concat.middleCols(h * dh, dh).noalias() = p * vh;
  }
  return o.forward(store, concat, cache.o_cache);
}

template <typename T>
Mat<T> MultiHeadAttention<T>::backward(const ParameterStore<T>& store, const AttentionCache<T>& cache,
                                       const Mat<T>& dy, GradientBuffer<T>& grads) const {
  const Eigen::Index S = dy.rows();
  const int dh = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const Mat<T> dconcat = o.backward(store, cache.o_cache, dy, grads);
  Mat<T> dq(S, dim), dk(S, dim), dv(S, dim);
  for (int h = 0; h < heads; ++h) {
    const Mat<T>& p = cache.probs[static_cast<std::size_t>(h)];
    const auto qh = cache.q.middleCols(h * dh, dh);
    const auto kh = cache.k.middleCols(h * dh, dh);
    const auto vh = cache.v.middleCols(h * dh, dh);
    const auto doh = dconcat.middleCols(h * dh, dh);
    Mat<T> dp(S, S);
    dp.noalias() = doh * vh.transpose();
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
    const Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = (dp.array() * p.array()).rowwise().sum();
    Mat<T> ds = p.array() * (dp.array().colwise() - row_dot.array());
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() = ds * kh;
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh;
  }
  Mat<T> dx = q.backward(store, cache.q_cache, dq, grads);
  dx += k.backward(store, cache.k_cache, dk, grads);
  dx += v.backward(store, cache.v_cache, dv, grads);
  return dx;
}

// ----------------------------------------------------------- FeedForward

template <typename T>
T gelu(T x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  constexpr T c = T(0.7978845608028654);
  const T th = std::tanh(c * (x + T(0.044715) * x * x * x));
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3 * 0.044715) * x * x);
}

template <typename T>
Mat<T> FeedForward<T>::forward(const ParameterStore<T>& store, const Mat<T>& x, FeedForwardCache<T>& cache) const {
  cache.x = x;
  cache.pre = up.forward(store, x);
  cache.act = cache.pre.unaryExpr([](T v) { return gelu(v); });
  return down.forward(store, cache.act);
}

template <typename T>
Mat<T> FeedForward<T>::backward(const ParameterStore<T>& store, const FeedForwardCache<T>& cache, const Mat<T>& dy,
                                GradientBuffer<T>& grads) const {
  const Mat<T> dact = down.backward(store, cache.act, dy, grads);
  const Mat<T> dpre = dact.array() * cache.pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
  return up.backward(store, cache.x, dpre, grads);
}

// ------------------------------------------------------------ Transformer

void TransformerConfig::validate() const {
  if (layers < 0) throw InputError("layers must be nonnegative");
  if (heads < 1 || d_hidden < 1 || d_hidden % heads != 0) throw InputError("d_hidden must be divisible by heads");
  if (ff_dim < 1) throw InputError("ff_dim must be positive");
  if (max_seq_len < 1) throw InputError("max_seq_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("dropout must lie in [0,1)");
  if (layers > 0 && (lora_rank < 1 || lora_rank > d_hidden)) throw InputError("lora_rank must lie in [1, d_hidden]");
}

namespace {

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, const ForwardContext& ctx) {
  std::bernoulli_distribution keep(1.0 - ctx.dropout);
  const T scale = static_cast<T>(1.0 / (1.0 - ctx.dropout));
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*ctx.rng) ? scale : T(0);
  return m;
}

}  // namespace

template <typename T>
Mat<T> TransformerBlock<T>::forward(const ParameterStore<T>& store, const Mat<T>& x, BlockCache<T>& cache,
                                    const ForwardContext& ctx) const {
  Mat<T> a = attn.forward(store, ln1.forward(store, x, cache.ln1), cache.attn);
  if (ctx.dropout_active()) {
    cache.drop1 = dropout_mask<T>(a.rows(), a.cols(), ctx);
    a.array() *= cache.drop1.array();
  } else {
    cache.drop1.resize(0, 0);
  }
  Mat<T> x1 = x + a;
  Mat<T> f = ff.forward(store, ln2.forward(store, x1, cache.ln2), cache.ff);
  if (ctx.dropout_active()) {
    cache.drop2 = dropout_mask<T>(f.rows(), f.cols(), ctx);
    f.array() *= cache.drop2.array();
  } else {
    cache.drop2.resize(0, 0);
  }
  return x1 + f;
}

template <typename T>
Mat<T> TransformerBlock<T>::backward(const ParameterStore<T>& store, const BlockCache<T>& cache, const Mat<T>& dy,
                                     GradientBuffer<T>& grads) const {
  Mat<T> df = dy;
  if (cache.drop2.size() > 0) df.array() *= cache.drop2.array();
  Mat<T> dx1 = dy + ln2.backward(store, cache.ln2, ff.backward(store, cache.ff, df, grads), grads);
  Mat<T> da = dx1;
  if (cache.drop1.size() > 0) da.array() *= cache.drop1.array();
  return dx1 + ln1.backward(store, cache.ln1, attn.backward(store, cache.attn, da, grads), grads);
}

template <typename T>
Transformer<T> Transformer<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                      const TransformerConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  Transformer t;
  t.cfg_ = cfg;
  const int D = cfg.d_hidden;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(D));
  const double out_std = in_std / std::sqrt(2.0 * std::max(cfg.layers, 1));
  const T scaling = static_cast<T>(cfg.lora_scaling);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + ".l" + std::to_string(l);
    TransformerBlock<T> blk;
    blk.ln1 = LayerNorm<T>::create(store, p + ".ln1", "backbone", D, true);
    blk.attn.heads = cfg.heads;
    blk.attn.dim = D;
    blk.attn.mask = cfg.attention;
    blk.attn.q = LoraLinear<T>::create(store, p + ".attn.q", D, D, cfg.lora_rank, scaling);
    blk.attn.k = LoraLinear<T>::create(store, p + ".attn.k", D, D, cfg.lora_rank, scaling);
    blk.attn.v = LoraLinear<T>::create(store, p + ".attn.v", D, D, cfg.lora_rank, scaling);
    blk.attn.o = LoraLinear<T>::create(store, p + ".attn.o", D, D, cfg.lora_rank, scaling);
    blk.attn.q.init(store, in_std, rng);
    blk.attn.k.init(store, in_std, rng);
    blk.attn.v.init(store, in_std, rng);
    blk.attn.o.init(store, out_std, rng);
    blk.ln2 = LayerNorm<T>::create(store, p + ".ln2", "backbone", D, true);
    blk.ff.up = Linear<T>::create(store, p + ".ff.up", "backbone", D, cfg.ff_dim, true);
    blk.ff.down = Linear<T>::create(store, p + ".ff.down", "backbone", cfg.ff_dim, D, true);
    init_normal(store[blk.ff.up.weight].value, in_std, rng);
    init_normal(store[blk.ff.down.weight].value, out_std * std::sqrt(static_cast<double>(D) / cfg.ff_dim), rng);
    t.blocks_.push_back(blk);
  }
  return t;
}

template <typename T>
void Transformer<T>::set_adapters_enabled(bool on) {
  for (auto& blk : blocks_) {
    for (LoraLinear<T>* l : {&blk.attn.q, &blk.attn.k, &blk.attn.v, &blk.attn.o}) l->enabled = on;
  }
}

template <typename T>
void Transformer<T>::merge_adapters(ParameterStore<T>& store) const {
  for (const auto& blk : blocks_) {
    for (const LoraLinear<T>* l : {&blk.attn.q, &blk.attn.k, &blk.attn.v, &blk.attn.o}) {
      store.mat(l->w0) = l->merged_weight(store);
      store.mat(l->b).setZero();
    }
  }
}

template <typename T>
Mat<T> Transformer<T>::forward(const ParameterStore<T>& store, const Mat<T>& x, std::vector<BlockCache<T>>& caches,
                               const ForwardContext& ctx) const {
  if (x.rows() > cfg_.max_seq_len) {
    throw InputError("sequence length " + std::to_string(x.rows()) + " exceeds max_seq_len " +
                     std::to_string(cfg_.max_seq_len));
  }
  if (x.cols() != cfg_.d_hidden) throw InputError("transformer input width does not match d_hidden");
  caches.resize(blocks_.size());
  Mat<T> h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) h = blocks_[i].forward(store, h, caches[i], ctx);
  return h;
}

template <typename T>
Mat<T> Transformer<T>::backward(const ParameterStore<T>& store, const std::vector<BlockCache<T>>& caches,
                                const Mat<T>& dy, GradientBuffer<T>& grads) const {
  Mat<T> d = dy;
  for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(store, caches[i], d, grads);
  return d;
}

template <typename T>
Tensor<T> Transformer<T>::forward(const ParameterStore<T>& store, const Tensor<T>& input) const {
  if (input.rank() != 3) throw InputError("transformer expects a [B, S, D] tensor");
  Tensor<T> out(input.shape());
  std::vector<BlockCache<T>> caches;
  for (std::size_t b = 0; b < input.dim(0); ++b) out.slice(b) = forward(store, Mat<T>(input.slice(b)), caches);
  return out;
}

// ------------------------------------------------------- free functions

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Mat<T>& weight, const Eigen::Matrix<T, 1, Eigen::Dynamic>& bias) {
  if (x.rank() == 0 || static_cast<Eigen::Index>(x.shape().back()) != weight.cols() || bias.size() != weight.rows()) {
    throw InputError("linear_forward shape mismatch: x " + shape_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = static_cast<std::size_t>(weight.rows());
  Tensor<T> y(out_shape);
  y.matrix().noalias() = x.matrix() * weight.transpose();
  y.matrix().rowwise() += bias;
  return y;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Mat<T>& weight, const Tensor<T>& dy) {
  if (static_cast<Eigen::Index>(dy.shape().back()) != weight.rows() || x.size() / x.shape().back() != dy.size() / dy.shape().back()) {
    throw InputError("linear_backward shape mismatch");
  }
  LinearGrads<T> g;
  g.dx = Tensor<T>(x.shape());
  g.dx.matrix().noalias() = dy.matrix() * weight;
  g.dweight = dy.matrix().transpose() * x.matrix();
  g.dbias = dy.matrix().colwise().sum();
  return g;
}

#define CMLLM_INSTANTIATE(T)                                                                              \
  template struct Linear<T>;                                                                              \
  template struct LoraLinear<T>;                                                                          \
  template struct LayerNorm<T>;                                                                           \
  template struct MultiHeadAttention<T>;                                                                  \
  template struct FeedForward<T>;                                                                         \
  template struct TransformerBlock<T>;                                                                    \
  template class Transformer<T>;                                                                          \
  template T gelu<T>(T);                                                                                  \
  template T gelu_grad<T>(T);                                                                             \
  template Tensor<T> linear_forward<T>(const Tensor<T>&, const Mat<T>&, const Eigen::Matrix<T, 1, Eigen::Dynamic>&); \
  template LinearGrads<T> linear_backward<T>(const Tensor<T>&, const Mat<T>&, const Tensor<T>&);

CMLLM_INSTANTIATE(float)
CMLLM_INSTANTIATE(double)
#undef CMLLM_INSTANTIATE

}  // namespace cmllm::nn
