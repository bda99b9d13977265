#include "cmllm/model/cm_model.hpp"

#include <random>

#include "cmllm/error.hpp"

namespace cmllm::model {

using nn::Mat;
using nn::Tensor;

namespace {

nlohmann::json backbone_json(const nn::TransformerConfig& b) {
  return {{"layers", b.layers},
          {"heads", b.heads},
          {"d_hidden", b.d_hidden},
          {"ff_dim", b.ff_dim},
          {"max_seq_len", b.max_seq_len},
          {"attention", b.attention == nn::AttentionMask::Causal ? "causal" : "full"},
          {"dropout", b.dropout},
          {"lora_rank", b.lora_rank},
          {"lora_scaling", b.lora_scaling}};
}

nn::TransformerConfig backbone_from_json(const nlohmann::json& j) {
  nn::TransformerConfig b;
  b.layers = j.value("layers", b.layers);
  b.heads = j.value("heads", b.heads);
  b.d_hidden = j.value("d_hidden", b.d_hidden);
  b.ff_dim = j.value("ff_dim", b.ff_dim);
  b.max_seq_len = j.value("max_seq_len", b.max_seq_len);
  const std::string att = j.value("attention", std::string("causal"));
  if (att == "causal") {
    b.attention = nn::AttentionMask::Causal;
  } else if (att == "full") {
    b.attention = nn::AttentionMask::Full;
  } else {
    throw InputError("attention must be 'causal' or 'full', got '" + att + "'");
  }
  b.dropout = j.value("dropout", b.dropout);
  b.lora_rank = j.value("lora_rank", b.lora_rank);
  b.lora_scaling = j.value("lora_scaling", b.lora_scaling);
  return b;
}

}  // namespace

void CmModelConfig::validate() const {
  if (num_vars < 1) throw InputError("num_vars must be positive");
  if (max_ts_len < 1) throw InputError("max_ts_len must be positive");
  if (vocab_size < 1) throw InputError("vocab_size must be positive");
  backbone.validate();
  dgp.validate();
  if (max_ts_len > backbone.max_seq_len) throw InputError("max_ts_len exceeds the backbone max_seq_len");
  if (!(token_std > 0.0) || !(position_std >= 0.0)) throw InputError("embedding scales must be positive");
}

void to_json(nlohmann::json& j, const CmModelConfig& c) {
  j = {{"num_vars", c.num_vars},
       {"max_ts_len", c.max_ts_len},
       {"vocab_size", c.vocab_size},
       {"vocab_id", c.vocab_id},
       {"backbone", backbone_json(c.backbone)},
       {"dgp", c.dgp},
       {"use_prompt", c.use_prompt},
       {"use_causal", c.use_causal},
       {"token_std", c.token_std},
       {"position_std", c.position_std},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CmModelConfig& c) {
  c.num_vars = j.value("num_vars", c.num_vars);
  c.max_ts_len = j.value("max_ts_len", c.max_ts_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.vocab_id = j.value("vocab_id", c.vocab_id);
  if (j.contains("backbone")) c.backbone = backbone_from_json(j.at("backbone"));
  if (j.contains("dgp")) c.dgp = j.at("dgp").get<DgpConfig>();
  c.use_prompt = j.value("use_prompt", c.use_prompt);
  c.use_causal = j.value("use_causal", c.use_causal);
  c.token_std = j.value("token_std", c.token_std);
  c.position_std = j.value("position_std", c.position_std);
  c.seed = j.value("seed", c.seed);
}

CmModelConfig default_model_config(int num_vars, int max_ts_len, const Tokenizer& tok) {
  CmModelConfig c;
  c.num_vars = num_vars;
  c.max_ts_len = max_ts_len;
  c.vocab_size = tok.vocab_size();
  c.vocab_id = tok.vocab_id();
  c.dgp.d_causal = std::max(1, c.backbone.d_hidden / 2);
  c.backbone.max_seq_len = max_ts_len + 192;
  return c;
}

template <typename T>
FusedInput<T> fuse(const Tensor<T>& e_txt, const Tensor<T>& e_ts, const Tensor<T>& e_causal) {
  if (e_ts.rank() != 3 || e_ts.shape() != e_causal.shape()) {
    throw InputError("fuse: time-series and causal embeddings differ in shape " + nn::shape_string(e_ts.shape()) +
                     " vs " + nn::shape_string(e_causal.shape()));
  }
  if (e_txt.rank() != 3 || e_txt.dim(0) != e_ts.dim(0) || e_txt.dim(2) != e_ts.dim(2)) {
    throw InputError("fuse: prompt embedding " + nn::shape_string(e_txt.shape()) + " incompatible with " +
                     nn::shape_string(e_ts.shape()));
  }
  const std::size_t B = e_ts.dim(0), Lp = e_txt.dim(1), L = e_ts.dim(1), D = e_ts.dim(2);
  FusedInput<T> out{Tensor<T>({B, Lp + L, D}), static_cast<int>(Lp)};
  for (std::size_t b = 0; b < B; ++b) {
    auto dst = out.embedding.slice(b);
    dst.topRows(static_cast<Eigen::Index>(Lp)) = e_txt.slice(b);
    dst.bottomRows(static_cast<Eigen::Index>(L)) = e_ts.slice(b) + e_causal.slice(b);
  }
  return out;
}

template <typename T>
CmModel<T> CmModel<T>::create(const CmModelConfig& cfg) {
  cfg.validate();
  CmModel m;
  m.cfg_ = cfg;
  auto& s = m.store_;
  const auto D = static_cast<std::size_t>(cfg.backbone.d_hidden);
  std::mt19937_64 rng(cfg.seed);
  m.tok_ = s.add("token_embedding", "token", {static_cast<std::size_t>(cfg.vocab_size), D}, true);
  m.pos_ = s.add("position_embedding", "token", {static_cast<std::size_t>(cfg.backbone.max_seq_len), D}, true);
  nn::init_normal(s[m.tok_].value, cfg.token_std, rng);
  nn::init_normal(s[m.pos_].value, cfg.position_std, rng);

  m.ts_embed_ = nn::Linear<T>::create(s, "ts_embed", "ts_embed", cfg.num_vars, cfg.backbone.d_hidden, false);
  m.ts_embed_.init(s, 1.0 / std::sqrt(static_cast<double>(cfg.num_vars)), rng);
  m.dgp_ = DgpLayer<T>::create(s, "dgp", cfg.num_vars, cfg.dgp);
  m.dgp_.init(s, rng);
  m.f_graph_ = nn::Linear<T>::create(s, "f_graph", "graph", cfg.dgp.d_causal, cfg.backbone.d_hidden, false);
  m.f_graph_.init(s, 1.0 / std::sqrt(static_cast<double>(cfg.dgp.d_causal)), rng);
  m.backbone_ = nn::Transformer<T>::create(s, "backbone", cfg.backbone, rng);
  m.proj_ = nn::Linear<T>::create(s, "f_proj", "proj", cfg.backbone.d_hidden, cfg.num_vars, false);
  m.proj_.init(s, 1.0 / std::sqrt(static_cast<double>(D)), rng);
  return m;
}

template <typename T>
CmModel<T> CmModel<T>::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (!ckpt.config.contains("model")) throw CompatibilityError("checkpoint header has no model configuration");
  CmModelConfig cfg;
  try {
    cfg = ckpt.config.at("model").get<CmModelConfig>();
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(std::string("unreadable model configuration in checkpoint: ") + e.what());
  } catch (const InputError& e) {
    throw CompatibilityError(std::string("invalid model configuration in checkpoint: ") + e.what());
  }
  CmModel m = create(cfg);
  nn::import_parameters(m.store_, ckpt);
  return m;
}

template <typename T>
nn::Checkpoint CmModel<T>::to_checkpoint(const nlohmann::json& extra) const {
  nn::Checkpoint ckpt;
  ckpt.config = extra;
  ckpt.config["model"] = cfg_;
  ckpt.arrays = nn::export_parameters(store_);
  return ckpt;
}

template <typename T>
void CmModel<T>::check_prompt(const PromptTokens& prompt) const {
  if (prompt.ids.empty()) throw InputError("prompt must contain at least one token");
  if (prompt.vocab_id != cfg_.vocab_id) throw CompatibilityError("prompt was tokenized with a different vocabulary");
  for (int id : prompt.ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw InputError("token id " + std::to_string(id) + " out of range");
  }
}

template <typename T>
void CmModel<T>::check_input(const Mat<T>& x) const {
  if (x.cols() != cfg_.num_vars) {
    throw InputError("input has " + std::to_string(x.cols()) + " variables, model expects " +
                     std::to_string(cfg_.num_vars));
  }
  if (x.rows() < 1 || x.rows() > cfg_.max_ts_len) {
    throw InputError("input length " + std::to_string(x.rows()) + " outside [1, " + std::to_string(cfg_.max_ts_len) +
                     "]");
  }
}

template <typename T>
Mat<T> CmModel<T>::prompt_rows(const nn::ParameterStore<T>& store, const PromptTokens& prompt) const {
  check_prompt(prompt);
  const auto n = static_cast<Eigen::Index>(prompt.ids.size());
  if (n > cfg_.backbone.max_seq_len) throw InputError("prompt longer than the backbone max_seq_len");
  Mat<T> e(n, cfg_.backbone.d_hidden);
  const auto tok = store.mat(tok_);
  const auto pos = store.mat(pos_);
  for (Eigen::Index i = 0; i < n; ++i) e.row(i) = tok.row(prompt.ids[static_cast<std::size_t>(i)]) + pos.row(i);
  return e;
}

template <typename T>
Tensor<T> CmModel<T>::embed_prompt(const std::vector<PromptTokens>& prompts) const {
  if (prompts.empty()) throw InputError("embed_prompt needs at least one prompt");
  const std::size_t n = prompts.front().size();
  const auto D = static_cast<std::size_t>(cfg_.backbone.d_hidden);
  Tensor<T> out({prompts.size(), n, D});
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    if (prompts[b].size() != n) throw InputError("prompts in one batch must share a length");
    out.slice(b) = prompt_rows(store_, prompts[b]);
  }
  return out;
}

template <typename T>
Tensor<T> CmModel<T>::embed_timeseries(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(2) != static_cast<std::size_t>(cfg_.num_vars)) {
    throw InputError("embed_timeseries expects [B, L, " + std::to_string(cfg_.num_vars) + "], got " +
                     nn::shape_string(x.shape()));
  }
  return nn::linear_forward<T>(x, store_.mat(ts_embed_.weight), store_.mat(ts_embed_.bias).row(0));
}

template <typename T>
Tensor<T> CmModel<T>::dgp_propagate(const Tensor<T>& x, const DgpAdjacency& adj) const {
  if (x.rank() != 3) throw InputError("dgp_propagate expects a [B, L, F] tensor");
  Tensor<T> out({x.dim(0), x.dim(1), static_cast<std::size_t>(cfg_.dgp.d_causal)});
  DgpCache<T> cache;
  for (std::size_t b = 0; b < x.dim(0); ++b) out.slice(b) = dgp_.forward(store_, Mat<T>(x.slice(b)), adj, cache);
  return out;
}

template <typename T>
Tensor<T> CmModel<T>::project_causal(const Tensor<T>& e_causal) const {
  if (e_causal.rank() != 3 || e_causal.dim(2) != static_cast<std::size_t>(cfg_.dgp.d_causal)) {
    throw InputError("project_causal expects a [B, L, D_causal] tensor, got " + nn::shape_string(e_causal.shape()));
  }
  return nn::linear_forward<T>(e_causal, store_.mat(f_graph_.weight), store_.mat(f_graph_.bias).row(0));
}

template <typename T>
Mat<T> CmModel<T>::forward(const nn::ParameterStore<T>& store, const Mat<T>& x, const PromptTokens& prompt,
                           const DgpAdjacency& adj, SampleCache<T>& cache, const nn::ForwardContext& ctx) const {
  check_input(x);
  if (cfg_.use_prompt) check_prompt(prompt);
  const Eigen::Index L = x.rows();
  const int lp = prefix_length(prompt);
  if (lp + L > cfg_.backbone.max_seq_len) {
    throw InputError("prompt plus series length " + std::to_string(lp + L) + " exceeds max_seq_len " +
                     std::to_string(cfg_.backbone.max_seq_len));
  }
  cache.x = x;
  cache.prompt_len = lp;
  cache.prompt_ids.assign(prompt.ids.begin(), prompt.ids.begin() + lp);
  Mat<T> input(lp + L, cfg_.backbone.d_hidden);
  if (lp > 0) input.topRows(lp) = prompt_rows(store, prompt);
  auto fused = input.bottomRows(L);
  fused = ts_embed_.forward(store, x);
  if (cfg_.use_causal) {
    cache.e_causal = dgp_.forward(store, x, adj, cache.dgp);
    fused += f_graph_.forward(store, cache.e_causal);
  }
  fused += store.mat(pos_).middleRows(lp, L);
  const Mat<T> h = backbone_.forward(store, input, cache.blocks, ctx);
  cache.h_ts = h.bottomRows(L);
  return proj_.forward(store, cache.h_ts);
}

template <typename T>
Mat<T> CmModel<T>::forward(const Mat<T>& x, const PromptTokens& prompt, const DgpAdjacency& adj) const {
  SampleCache<T> cache;
  return forward(store_, x, prompt, adj, cache);
}

template <typename T>
void CmModel<T>::backward(const nn::ParameterStore<T>& store, const SampleCache<T>& cache, const Mat<T>& dy,
                          nn::GradientBuffer<T>& grads) const {
  const Eigen::Index L = cache.x.rows();
  const int lp = cache.prompt_len;
  Mat<T> dh = Mat<T>::Zero(lp + L, cfg_.backbone.d_hidden);
  dh.bottomRows(L) = proj_.backward(store, cache.h_ts, dy, grads);
  const Mat<T> dinput = backbone_.backward(store, cache.blocks, dh, grads);
  if (!store[pos_].frozen) grads.mat(pos_).topRows(lp + L) += dinput;
  if (!store[tok_].frozen) {
    for (int i = 0; i < lp; ++i) grads.mat(tok_).row(cache.prompt_ids[static_cast<std::size_t>(i)]) += dinput.row(i);
  }
  const Mat<T> dfused = dinput.bottomRows(L);
  ts_embed_.backward(store, cache.x, dfused, grads);
  if (cfg_.use_causal) {
    const Mat<T> de = f_graph_.backward(store, cache.e_causal, dfused, grads);
    dgp_.backward(store, cache.dgp, de, grads);
  }
}

template <typename T>
Tensor<T> CmModel<T>::sliced_hidden(const Tensor<T>& x, const std::vector<PromptTokens>& prompts,
                                    const DgpAdjacency& adj) const {
  if (x.rank() != 3 || x.dim(0) != prompts.size()) throw InputError("need one prompt per batch item");
  Tensor<T> out({x.dim(0), x.dim(1), static_cast<std::size_t>(cfg_.backbone.d_hidden)});
  SampleCache<T> cache;
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    if (prefix_length(prompts[b]) != prefix_length(prompts.front())) {
      throw InputError("prompts in one batch must share a length");
    }
    forward(store_, Mat<T>(x.slice(b)), prompts[b], adj, cache);
    out.slice(b) = cache.h_ts;
  }
  return out;
}

template <typename T>
Tensor<T> CmModel<T>::project_output(const Tensor<T>& h_ts) const {
  return nn::linear_forward<T>(h_ts, store_.mat(proj_.weight), store_.mat(proj_.bias).row(0));
}

template <typename T>
Tensor<T> CmModel<T>::model_forward(const Tensor<T>& x, const std::vector<PromptTokens>& prompts,
                                    const DgpAdjacency& adj) const {
  return project_output(sliced_hidden(x, prompts, adj));
}

template class CmModel<float>;
template class CmModel<double>;
template FusedInput<float> fuse<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template FusedInput<double> fuse<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace cmllm::model
