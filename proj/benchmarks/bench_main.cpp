#include <benchmark/benchmark.h>

#include <random>

#include "cmllm/causal.hpp"
#include "cmllm/metrics/metrics.hpp"
#include "cmllm/model/cm_model.hpp"
#include "cmllm/model/prompts.hpp"
#include "cmllm/plant.hpp"
#include "cmllm/series.hpp"
#include "cmllm/task.hpp"
#include "cmllm/train/batch.hpp"
#include "cmllm/train/sample.hpp"
#include "cmllm/train/trainer.hpp"

using namespace cmllm;

namespace {

model::CmModelConfig small_config(int len) {
  auto c = model::default_model_config(6, len);
  c.backbone.d_hidden = 32;
  c.backbone.layers = 2;
  c.backbone.heads = 4;
  c.backbone.ff_dim = 64;
  c.backbone.lora_rank = 8;
  c.dgp.d_g = 16;
  c.dgp.d_causal = 16;
  return c;
}

model::PromptTokens prompt_for(int len) {
  model::PromptContext ctx;
  ctx.task = TaskKind::Imputation;
  ctx.length = len;
  ctx.resolution_minutes = 15;
  ctx.variable_names = plant::variable_names();
  return model::Tokenizer::builtin().tokenize(model::render_prompt(ctx));
}

}  // namespace

static void BM_Discover(benchmark::State& state) {
  plant::PlantConfig cfg;
  cfg.resolution_minutes = static_cast<int>(state.range(0));
  const auto pooled = plant::pool_days(plant::generate_dataset(cfg, 20).days);
  const auto prior = plant::physical_prior();
  for (auto _ : state) benchmark::DoNotOptimize(causal::discover(pooled, prior, {}));
  state.SetLabel(std::to_string(pooled.rows()) + " rows");
}
BENCHMARK(BM_Discover)->Arg(15)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Dtw(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = normal(rng);
    b[i] = normal(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::dtw(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Dtw)->RangeMultiplier(4)->Range(96, 1536)->Complexity(benchmark::oNSquared);

static void BM_ModelForward(benchmark::State& state) {
  const int len = static_cast<int>(state.range(0));
  const auto m = model::CmModel<float>::create(small_config(len));
  const auto adj = model::dgp_adjacency(plant::ground_truth_graph(), plant::variable_names(), m.config().dgp);
  const auto prompt = prompt_for(len);
  nn::Mat<float> x = nn::Mat<float>::Random(len, 6);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x, prompt, adj));
}
BENCHMARK(BM_ModelForward)->Arg(96)->Arg(384)->Unit(benchmark::kMicrosecond);

static void BM_BatchGradients(benchmark::State& state) {
  plant::PlantConfig pc;
  pc.resolution_minutes = 15;
  const auto days = plant::generate_dataset(pc, 8).days;
  const auto m = model::CmModel<float>::create(small_config(96));
  const auto graph = plant::ground_truth_graph();
  const auto adj = model::dgp_adjacency(graph, plant::variable_names(), m.config().dgp);
  std::mt19937_64 rng(2);
  train::SampleOptions opts;
  opts.l_fix = 96;
  std::vector<train::SftSample> samples;
  for (const auto& d : days) {
    const auto norm = instance_normalize(d);
    samples.push_back(train::build_sample(norm.series, TaskKind::Imputation, TaskParams{}, graph, rng, opts, norm.params));
  }
  const auto batch = train::collate(samples);
  const std::vector<const model::DgpAdjacency*> adjs(samples.size(), &adj);
  for (auto _ : state) {
    benchmark::DoNotOptimize(train::batch_gradients<float>(m, m.params(), batch, adjs, train::LossConfig{1.0}, nullptr));
  }
}
BENCHMARK(BM_BatchGradients)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
