#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cmllm/error.hpp"
#include "cmllm/model/cm_model.hpp"
#include "cmllm/model/prompts.hpp"
#include "cmllm/plant.hpp"

using namespace cmllm;
using namespace cmllm::model;
using nn::Mat;
using nn::Tensor;

namespace {

CmModelConfig small_config(int num_vars = 3, int max_ts_len = 12) {
  CmModelConfig c = default_model_config(num_vars, max_ts_len);
  c.backbone.layers = 1;
  c.backbone.heads = 2;
  c.backbone.d_hidden = 8;
  c.backbone.ff_dim = 16;
  c.backbone.lora_rank = 2;
  c.dgp.d_g = 4;
  c.dgp.d_causal = 4;
  c.seed = 11;
  return c;
}

causal::CausalGraph chain3(const std::vector<std::string>& names) {
  causal::CausalGraph g;
  g.nodes = names;
  g.edges = {{0, 1, 0.5, false}, {1, 2, 0.4, false}};
  return g;
}

std::vector<std::string> abc() { return {"a", "b", "c"}; }

Tensor<double> random_input(std::size_t b, std::size_t l, std::size_t f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<double> x({b, l, f});
  for (auto& v : x.storage()) v = n(rng);
  return x;
}

PromptTokens short_prompt(const std::string& text = "Task type: imputation of missing values.") {
  return Tokenizer::builtin().tokenize(text);
}

void set_vec(nn::ParameterStore<double>& s, const std::string& name, std::vector<double> v) {
  const auto id = s.find(name);
  REQUIRE(id);
  REQUIRE(s[*id].value.size() == v.size());
  s[*id].value.storage() = std::move(v);
}

void zero_param(nn::ParameterStore<double>& s, const std::string& name) {
  const auto id = s.find(name);
  REQUIRE(id);
  s.mat(*id).setZero();
}

}  // namespace

TEST_CASE("tokenizer is deterministic and hashes unknown words into the OOV range") {
  const auto& tok = Tokenizer::builtin();
  const auto a = tok.tokenize("Role: you are a power system data analyst.");
  const auto b = tok.tokenize("Role: you are a power system data analyst.");
  CHECK(a.ids == b.ids);
  CHECK(a.vocab_id == tok.vocab_id());
  for (int id : a.ids) CHECK(id < tok.known_size());

  const auto oov = tok.tokenize("zyzzyva quux");
  REQUIRE(oov.size() == 2);
  for (int id : oov.ids) {
    CHECK(tok.is_oov(id));
    CHECK(id >= tok.known_size());
    CHECK(id < tok.known_size() + kOovBuckets);
  }
  CHECK(tok.tokenize("zyzzyva").ids == std::vector<int>{oov.ids[0]});
  CHECK(split_tokens("pv_output, 12.") == std::vector<std::string>{"pv_output", ",", "1", "2", "."});
}

TEST_CASE("rendered prompts detokenize back to the same text") {
  PromptContext ctx;
  ctx.length = 96;
  ctx.resolution_minutes = 15;
  ctx.variable_names = plant::variable_names();
  for (TaskKind k : {TaskKind::Imputation, TaskKind::Forecast, TaskKind::SuperResolution}) {
    ctx.task = k;
    const std::string text = render_prompt(ctx);
    CHECK(text.find('{') == std::string::npos);
    const auto toks = Tokenizer::builtin().tokenize(text);
    for (int id : toks.ids) CHECK_FALSE(Tokenizer::builtin().is_oov(id));
    CHECK(Tokenizer::builtin().detokenize(toks.ids) == text);
  }
}

TEST_CASE("prompt files match the built-in templates") {
  const std::filesystem::path dir = std::filesystem::path(CMLLM_SOURCE_DIR) / "prompts";
  CHECK(load_template_file(dir / "imputation.txt").text() == builtin_template(TaskKind::Imputation).text());
  CHECK(load_template_file(dir / "forecast.txt").text() == builtin_template(TaskKind::Forecast).text());
  CHECK(load_template_file(dir / "superres.txt").text() == builtin_template(TaskKind::SuperResolution).text());
  const auto tpl = builtin_template(TaskKind::Forecast);
  CHECK(parse_template(format_template(tpl)).text() == tpl.text());
}

TEST_CASE("placeholders without values are rejected") {
  CHECK(render("{x} and {y}", {{"x", "1"}, {"y", "2"}}) == "1 and 2");
  CHECK_THROWS_AS(render("{x} and {y}", {{"x", "1"}}), InputError);
  CHECK_THROWS_AS(parse_template("Task type: a\nRole: b\n"), InputError);
}

TEST_CASE("DGP two-node state matches a hand computation") {
  nn::ParameterStore<double> store;
  DgpConfig cfg;
  cfg.d_g = 2;
  cfg.d_causal = 3;
  const auto layer = DgpLayer<double>::create(store, "dgp", 2, cfg);
  const std::vector<double> wa{0.3, -0.7}, wd{1.1, 0.2}, ws{-0.4, 0.9}, bias{0.05, -0.1};
  set_vec(store, "dgp.w_anc", wa);
  set_vec(store, "dgp.w_desc", wd);
  set_vec(store, "dgp.w_self", ws);
  set_vec(store, "dgp.bias", bias);
  std::mt19937_64 rng(3);
  nn::init_uniform(store[layer.out.weight].value, 1.0, rng);
  nn::init_uniform(store[layer.out.bias].value, 1.0, rng);

  causal::CausalGraph g;
  g.nodes = {"u", "v"};
  g.edges = {{0, 1, 0.8, false}};
  const auto adj = dgp_adjacency(g, g.nodes, cfg);

  Mat<double> x(2, 2);
  x << 0.6, -1.3, 2.0, 0.25;
  DgpCache<double> cache;
  const Mat<double> y = layer.forward(store, x, adj, cache);

  Mat<double> state(2, 4);
  for (int t = 0; t < 2; ++t) {
    const double a = x(t, 0), b = x(t, 1);
    for (int k = 0; k < 2; ++k) {
      state(t, k) = std::tanh(b * wd[k] + a * ws[k] + bias[k]);      // u: only a descendant
      state(t, 2 + k) = std::tanh(a * wa[k] + b * ws[k] + bias[k]);  // v: only an ancestor
    }
  }
  CHECK((cache.state - state).cwiseAbs().maxCoeff() < 1e-14);
  const Mat<double> w = store.mat(layer.out.weight);
  Mat<double> expect = state * w.transpose();
  expect.rowwise() += store.mat(layer.out.bias).row(0);
  CHECK((y - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("empty graph leaves only the self term") {
  nn::ParameterStore<double> store;
  DgpConfig cfg;
  cfg.d_g = 3;
  const auto layer = DgpLayer<double>::create(store, "dgp", 3, cfg);
  std::mt19937_64 rng(5);
  layer.init(store, rng);
  causal::CausalGraph g;
  g.nodes = abc();
  const auto adj = dgp_adjacency(g, g.nodes, cfg);
  CHECK(adj.anc.isZero());
  CHECK(adj.desc.isZero());
  const Mat<double> x = random_input(1, 5, 3, 9).slice(0);
  DgpCache<double> cache;
  layer.forward(store, x, adj, cache);
  const auto ws = store.mat(layer.w_self).row(0);
  const auto b = store.mat(layer.bias).row(0);
  for (int t = 0; t < 5; ++t) {
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) CHECK(cache.state(t, i * 3 + k) == doctest::Approx(std::tanh(x(t, i) * ws(k) + b(k))));
    }
  }
}

TEST_CASE("DGP state of a node ignores unrelated variables") {
  nn::ParameterStore<double> store;
  DgpConfig cfg;
  cfg.d_g = 4;
  const auto layer = DgpLayer<double>::create(store, "dgp", 3, cfg);
  std::mt19937_64 rng(6);
  layer.init(store, rng);
  causal::CausalGraph g;
  g.nodes = abc();
  g.edges = {{0, 1, 0.7, false}};  // c is isolated
  const auto adj = dgp_adjacency(g, g.nodes, cfg);
  Mat<double> x = random_input(1, 4, 3, 10).slice(0);
  DgpCache<double> c1, c2;
  layer.forward(store, x, adj, c1);
  x.col(1).array() += 3.0;
  layer.forward(store, x, adj, c2);
  CHECK(c1.state.middleCols(8, 4) == c2.state.middleCols(8, 4));
  CHECK(c1.state.middleCols(0, 4) != c2.state.middleCols(0, 4));
  CHECK(c1.state.middleCols(4, 4) != c2.state.middleCols(4, 4));
}

TEST_CASE("adjacency closure and normalization") {
  causal::CausalGraph g;
  g.nodes = abc();
  g.edges = {{0, 1, 0.5, false}, {1, 2, 0.4, false}, {0, 2, 0.1, false}};
  DgpConfig cfg;
  const auto adj = dgp_adjacency(g, g.nodes, cfg);
  // c's ancestors: a via max(0.1, 0.5 * 0.4) = 0.2, b directly 0.4.
  CHECK(adj.anc(2, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(adj.anc(2, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(adj.anc(1, 0) == doctest::Approx(1.0));
  CHECK(adj.anc.row(0).isZero());
  // a's descendants: b 0.5 and c 0.2.
  CHECK(adj.desc(0, 1) == doctest::Approx(0.5 / 0.7));
  CHECK(adj.desc(0, 2) == doctest::Approx(0.2 / 0.7));
  CHECK(adj.desc.row(2).isZero());
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double s = adj.anc.row(i).sum();
    CHECK((s == 0.0 || std::abs(s - 1.0) < 1e-12));
  }

  cfg.use_edge_weights = false;
  cfg.closure = DgpClosure::Direct;
  const auto direct = dgp_adjacency(g, g.nodes, cfg);
  CHECK(direct.anc(2, 0) == doctest::Approx(0.5));
  CHECK(direct.anc(2, 1) == doctest::Approx(0.5));

  causal::CausalGraph cyc = g;
  cyc.edges.push_back({2, 0, 0.3, false});
  CHECK_THROWS_AS(dgp_adjacency(cyc, cyc.nodes, {}), InputError);
  CHECK_THROWS_AS(dgp_adjacency(g, {"a", "c", "b"}, {}), InputError);
}

TEST_CASE("model component shapes") {
  const auto cfg = small_config();
  const auto m = CmModel<double>::create(cfg);
  const auto adj = dgp_adjacency(chain3(abc()), abc(), cfg.dgp);
  const auto x = random_input(2, 7, 3, 1);
  const std::vector<PromptTokens> prompts{short_prompt(), short_prompt()};
  const auto lp = prompts[0].size();

  const auto e_txt = m.embed_prompt(prompts);
  CHECK(e_txt.shape() == nn::Shape{2, lp, 8});
  const auto e_ts = m.embed_timeseries(x);
  CHECK(e_ts.shape() == nn::Shape{2, 7, 8});
  const auto h_g = m.dgp_propagate(x, adj);
  CHECK(h_g.shape() == nn::Shape{2, 7, 4});
  const auto e_c = m.project_causal(h_g);
  CHECK(e_c.shape() == nn::Shape{2, 7, 8});
  const auto fused = fuse(e_txt, e_ts, e_c);
  CHECK(fused.embedding.shape() == nn::Shape{2, lp + 7, 8});
  CHECK(fused.prompt_len == static_cast<int>(lp));
  for (std::size_t b = 0; b < 2; ++b) {
    CHECK(Mat<double>(fused.embedding.slice(b).topRows(lp)) == Mat<double>(e_txt.slice(b)));
    const Mat<double> sum = e_ts.slice(b) + e_c.slice(b);
    CHECK(Mat<double>(fused.embedding.slice(b).bottomRows(7)) == sum);
  }
  CHECK_THROWS_AS(fuse(e_txt, e_ts, h_g), InputError);

  const auto y = m.model_forward(x, prompts, adj);
  CHECK(y.shape() == nn::Shape{2, 7, 3});
  CHECK(y.all_finite());
  CHECK_THROWS_AS(m.model_forward(random_input(1, 13, 3, 2), {short_prompt()}, adj), InputError);
  CHECK_THROWS_AS(m.model_forward(random_input(1, 5, 4, 2), {short_prompt()}, adj), InputError);
}

TEST_CASE("output projection of the sliced hidden states equals the forward pass") {
  const auto cfg = small_config();
  const auto m = CmModel<double>::create(cfg);
  const auto adj = dgp_adjacency(chain3(abc()), abc(), cfg.dgp);
  const auto x = random_input(1, 9, 3, 4);
  const std::vector<PromptTokens> p{short_prompt()};
  const auto h = m.sliced_hidden(x, p, adj);
  CHECK(h.shape() == nn::Shape{1, 9, 8});
  CHECK(m.project_output(h) == m.model_forward(x, p, adj));
}

TEST_CASE("zeroed causal projection reproduces the prompt-only model exactly") {
  auto cfg = small_config();
  auto full = CmModel<double>::create(cfg);
  cfg.use_causal = false;
  const auto prompt_only = CmModel<double>::create(cfg);
  zero_param(full.params(), "f_graph.weight");
  zero_param(full.params(), "f_graph.bias");
  const auto adj = dgp_adjacency(chain3(abc()), abc(), full.config().dgp);
  const auto x = random_input(1, 10, 3, 8);
  const std::vector<PromptTokens> p{short_prompt()};
  CHECK(full.model_forward(x, p, adj) == prompt_only.model_forward(x, p, adj));
}

TEST_CASE("prompt prefix can be switched off") {
  auto cfg = small_config();
  cfg.use_prompt = false;
  const auto m = CmModel<double>::create(cfg);
  const auto p = short_prompt();
  CHECK(m.prefix_length(p) == 0);
  const auto adj = dgp_adjacency(chain3(abc()), abc(), cfg.dgp);
  const auto x = random_input(1, 6, 3, 12);
  const auto other = short_prompt("Role: you are a power system data analyst.");
  CHECK(m.model_forward(x, {p}, adj) == m.model_forward(x, {other}, adj));

  cfg.use_prompt = true;
  const auto with = CmModel<double>::create(cfg);
  CHECK(with.prefix_length(p) == static_cast<int>(p.size()));
  CHECK(with.model_forward(x, {p}, adj) != with.model_forward(x, {other}, adj));
}

TEST_CASE("zero-depth backbone with zero projection outputs zero") {
  auto cfg = small_config();
  cfg.backbone.layers = 0;
  auto m = CmModel<double>::create(cfg);
  zero_param(m.params(), "f_proj.weight");
  zero_param(m.params(), "f_proj.bias");
  const auto adj = dgp_adjacency(chain3(abc()), abc(), cfg.dgp);
  const auto y = m.model_forward(random_input(1, 5, 3, 13), {short_prompt()}, adj);
  for (double v : y.storage()) CHECK(v == 0.0);
}

TEST_CASE("models restored from a checkpoint predict identically") {
  const auto cfg = small_config();
  auto m = CmModel<float>::create(cfg);
  std::mt19937_64 rng(2);
  for (auto& p : m.params()) {
    if (!p.frozen) nn::init_normal(p.value, 0.1, rng);
  }
  const auto back = CmModel<float>::from_checkpoint(m.to_checkpoint({{"note", "x"}}));
  const auto adj = dgp_adjacency(chain3(abc()), abc(), cfg.dgp);
  const auto x = random_input(2, 8, 3, 14).cast<float>();
  const std::vector<PromptTokens> p{short_prompt(), short_prompt()};
  CHECK(back.model_forward(x, p, adj) == m.model_forward(x, p, adj));

  nn::Checkpoint bad = m.to_checkpoint();
  bad.config.erase("model");
  CHECK_THROWS_AS(CmModel<float>::from_checkpoint(bad), CompatibilityError);
}

TEST_CASE("prompts from another vocabulary are rejected") {
  const auto m = CmModel<double>::create(small_config());
  const auto adj = dgp_adjacency(chain3(abc()), abc(), m.config().dgp);
  auto p = short_prompt();
  p.vocab_id ^= 1u;
  CHECK_THROWS_AS(m.model_forward(random_input(1, 4, 3, 1), {p}, adj), CompatibilityError);
  PromptTokens empty;
  empty.vocab_id = m.config().vocab_id;
  CHECK_THROWS_AS(m.model_forward(random_input(1, 4, 3, 1), {empty}, adj), InputError);
  auto big = short_prompt();
  big.ids[0] = m.config().vocab_size;
  CHECK_THROWS_AS(m.embed_prompt({big}), InputError);
}

TEST_CASE("time-series embedding acts on each timestep separately") {
  const auto m = CmModel<double>::create(small_config());
  const auto x = random_input(1, 6, 3, 15);
  Tensor<double> perm = x;
  const std::vector<int> order{5, 2, 0, 4, 1, 3};
  for (int t = 0; t < 6; ++t) perm.slice(0).row(t) = x.slice(0).row(order[t]);
  const auto e = m.embed_timeseries(x);
  const auto ep = m.embed_timeseries(perm);
  for (int t = 0; t < 6; ++t) CHECK(Mat<double>(ep.slice(0).row(t)) == Mat<double>(e.slice(0).row(order[t])));
}

TEST_CASE("distinct tokens embed to distinct rows") {
  const auto m = CmModel<double>::create(small_config());
  PromptTokens p;
  p.vocab_id = m.config().vocab_id;
  p.ids = {0, 1, 2, m.config().vocab_size - 1};
  const auto e = m.embed_prompt({p});
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) CHECK(Mat<double>(e.slice(0).row(i)) != Mat<double>(e.slice(0).row(j)));
  }
}

TEST_CASE("model backward agrees with central differences") {
  auto cfg = small_config(3, 6);
  cfg.backbone.attention = nn::AttentionMask::Causal;
  auto m = CmModel<double>::create(cfg);
  std::mt19937_64 rng(21);
  for (auto& p : m.params()) nn::init_normal(p.value, 0.3, rng);
  const auto adj = dgp_adjacency(chain3(abc()), abc(), cfg.dgp);
  const Mat<double> x = random_input(1, 5, 3, 22).slice(0);
  const Mat<double> w = random_input(1, 5, 3, 23).slice(0);
  const auto prompt = short_prompt();
  auto loss = [&] { return (m.forward(x, prompt, adj).array() * w.array()).sum(); };

  SampleCache<double> cache;
  m.forward(m.params(), x, prompt, adj, cache);
  nn::GradientBuffer<double> grads(m.params());
  m.backward(m.params(), cache, w, grads);

  int checked = 0;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto& p = m.params().at(i);
    if (p.frozen) continue;
    for (std::size_t k = 0; k < p.value.size(); k += std::max<std::size_t>(1, p.value.size() / 3)) {
      const double orig = p.value[k];
      const double h = 1e-6;
      p.value[k] = orig + h;
      const double up = loss();
      p.value[k] = orig - h;
      const double down = loss();
      p.value[k] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = grads.at(i)[k];
      CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(fd)));
      ++checked;
    }
  }
  CHECK(checked > 20);
}
