#include <doctest.h>

#include <filesystem>
#include <random>

#include "cmllm/error.hpp"
#include "cmllm/plant.hpp"
#include "cmllm/train/batch.hpp"
#include "cmllm/train/manifest.hpp"
#include "cmllm/train/reconstruct.hpp"
#include "cmllm/train/sample.hpp"
#include "cmllm/train/trainer.hpp"

using namespace cmllm;
using namespace cmllm::train;
using nn::Tensor;

namespace {

// One sample with F = 2 variables and L = 2 steps; target zeros, one masked cell.
Batch tiny_batch() {
  Batch b;
  b.task = TaskKind::Imputation;
  b.inputs = Tensor<double>({1, 2, 2});
  b.targets = Tensor<double>({1, 2, 2});
  b.masks = Tensor<double>({1, 2, 2});
  b.padding = Tensor<double>({1, 2, 2});
  b.masks.slice(0)(1, 1) = 1.0;
  b.valid_lengths = {2};
  b.prompts.resize(1);
  b.samples.resize(1, nullptr);
  b.max_length = 2;
  return b;
}

std::vector<TimeSeriesMatrix> plant_days(int n, int resolution = 60, std::uint64_t seed = 4) {
  plant::PlantConfig cfg;
  cfg.resolution_minutes = resolution;
  cfg.seed = seed;
  return plant::generate_dataset(cfg, n).days;
}

TaskParams small_params() {
  TaskParams p;
  p.mu = 4;
  p.sigma = 1;
  p.segments_per_variable = 1;
  p.horizon = 6;
  p.factor = 3;
  return p;
}

model::CmModelConfig small_model(int max_ts_len = 24) {
  auto c = model::default_model_config(6, max_ts_len);
  c.backbone.layers = 1;
  c.backbone.heads = 2;
  c.backbone.d_hidden = 8;
  c.backbone.ff_dim = 16;
  c.backbone.lora_rank = 2;
  c.dgp.d_g = 4;
  c.dgp.d_causal = 4;
  c.seed = 5;
  return c;
}

std::vector<SftSample> small_dataset(int days = 4) {
  SampleOptions opts;
  opts.l_fix = 24;
  return build_dataset(plant_days(days), {TaskKind::Imputation, TaskKind::Forecast}, small_params(),
                       plant::ground_truth_graph(), opts, 17);
}

}  // namespace

TEST_CASE("loss matches a hand-computed 2x2 case") {
  const Batch b = tiny_batch();
  Tensor<double> pred({1, 2, 2}, {1, 2, 3, 4});
  const auto l = compute_loss(pred, b, LossConfig{1.0});
  CHECK(l.acc == doctest::Approx(7.5));
  CHECK(l.mask == doctest::Approx(16.0));
  CHECK(l.total == doctest::Approx(23.5));
  const auto l0 = compute_loss(pred, b, LossConfig{0.0});
  CHECK(l0.total == doctest::Approx(l0.acc));

  Batch target_is_pred = tiny_batch();
  target_is_pred.targets = pred;
  CHECK(compute_loss(pred, target_is_pred, LossConfig{2.0}).total == 0.0);
  CHECK_THROWS_AS(compute_loss(pred, b, LossConfig{-1.0}), InputError);
  CHECK_THROWS_AS(compute_loss(Tensor<double>({1, 1, 2}), b, LossConfig{}), InputError);
}

TEST_CASE("loss gradient agrees with central differences") {
  Batch b = tiny_batch();
  b.targets.storage() = {0.3, -0.2, 0.9, 0.1};
  b.masks.storage() = {1, 0, 0, 1};
  Tensor<double> pred({1, 2, 2}, {1.1, -0.4, 0.2, 0.7});
  Tensor<double> grad;
  compute_loss(pred, b, LossConfig{0.7}, &grad);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    Tensor<double> up = pred, down = pred;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double fd =
        (compute_loss(up, b, LossConfig{0.7}).total - compute_loss(down, b, LossConfig{0.7}).total) / 2e-6;
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("padded positions never reach the loss") {
  const auto samples = small_dataset(2);
  auto shorter = samples[0];
  // Cut the first sample to 20 valid steps so that it carries padding.
  shorter.valid_length = 20;
  shorter.target = Matrix(samples[0].target.leftCols(20));
  shorter.mask.values = samples[0].mask.values.leftCols(20);
  const Batch b = collate(std::vector<const SftSample*>{&shorter, &samples[2]});
  CHECK(b.max_length == 24);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  Tensor<double> pred({2, 24, 6});
  for (auto& v : pred.storage()) v = n(rng);
  Tensor<double> g1;
  const auto l1 = compute_loss(pred, b, LossConfig{}, &g1);
  for (int t = 20; t < 24; ++t) {
    for (int f = 0; f < 6; ++f) {
      pred.slice(0)(t, f) = 1e6;
      CHECK(b.padding.slice(0)(t, f) == 1.0);
      CHECK(g1.slice(0)(t, f) == 0.0);
    }
  }
  CHECK(compute_loss(pred, b, LossConfig{}).total == l1.total);
}

TEST_CASE("collate pads to the longest sample and rejects mixed batches") {
  const auto samples = small_dataset(2);
  const Batch b = collate(std::vector<const SftSample*>{&samples[0], &samples[2]});
  CHECK(b.size() == 2);
  CHECK(b.inputs.shape() == nn::Shape{2, 24, 6});
  CHECK(b.targets.shape() == nn::Shape{2, 24, 6});
  CHECK(b.task == TaskKind::Imputation);
  CHECK(b.padding.matrix().isZero());
  CHECK_THROWS_AS(collate(std::vector<const SftSample*>{}), InputError);
  CHECK_THROWS_AS(collate(std::vector<const SftSample*>{&samples[0], &samples[1]}), InputError);
  SftSample wide = samples[0];
  wide.input.values = Matrix::Constant(6, 30, kMaskSentinel);
  CHECK_THROWS_AS(collate(std::vector<const SftSample*>{&samples[0], &wide}), InputError);
}

TEST_CASE("batches never mix tasks or prompt lengths") {
  const auto samples = small_dataset(5);
  std::mt19937_64 rng(3);
  const auto plan = plan_batches(samples, 2, true, rng);
  std::vector<int> seen(samples.size(), 0);
  for (const auto& batch : plan) {
    CHECK(batch.size() <= 2);
    for (std::size_t i : batch) {
      ++seen[i];
      CHECK(samples[i].task == samples[batch[0]].task);
      CHECK(samples[i].tokens.size() == samples[batch[0]].tokens.size());
    }
  }
  for (int c : seen) CHECK(c == 1);
}

TEST_CASE("dataset layout is day-major and deterministic") {
  const auto a = small_dataset(3);
  const auto b = small_dataset(3);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].day_index == i / 2);
    CHECK(a[i].task == (i % 2 == 0 ? TaskKind::Imputation : TaskKind::Forecast));
    CHECK(a[i].mask.values == b[i].mask.values);
    CHECK(a[i].input.values == b[i].input.values);
    CHECK(a[i].target.minCoeff() >= 0.0);
    CHECK(a[i].target.maxCoeff() <= 1.0);
  }
}

TEST_CASE("training is reproducible for a fixed seed") {
  const auto samples = small_dataset(3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.seed = 9;
  auto m1 = model::CmModel<float>::create(small_model());
  auto m2 = model::CmModel<float>::create(small_model());
  const auto h1 = train::train(m1, samples, cfg).history;
  const auto h2 = train::train(m2, samples, cfg).history;
  REQUIRE(h1.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) CHECK(h1[e].total == h2[e].total);
  for (std::size_t i = 0; i < m1.params().size(); ++i) CHECK(m1.params().at(i).value == m2.params().at(i).value);

  cfg.threads = 3;
  auto m3 = model::CmModel<float>::create(small_model());
  const auto h3 = train::train(m3, samples, cfg).history;
  for (std::size_t e = 0; e < 2; ++e) CHECK(h3[e].total == h1[e].total);
}

TEST_CASE("frozen parameters never move and a zero learning rate moves nothing") {
  const auto samples = small_dataset(2);
  const auto init = model::CmModel<float>::create(small_model());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.adam.lr = 1e-2;
  auto m = init;
  train::train(m, samples, cfg);
  bool any_moved = false;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& p = m.params().at(i);
    if (p.frozen) {
      CHECK_MESSAGE(p.value == init.params().at(i).value, p.name);
    } else {
      any_moved = any_moved || p.value != init.params().at(i).value;
    }
  }
  CHECK(any_moved);

  cfg.adam.lr = 0.0;
  auto still = init;
  train::train(still, samples, cfg);
  for (std::size_t i = 0; i < still.params().size(); ++i) CHECK(still.params().at(i).value == init.params().at(i).value);
}

TEST_CASE("training loss decreases on a small problem") {
  const auto samples = small_dataset(4);
  auto m = model::CmModel<float>::create(small_model());
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 4;
  cfg.adam.lr = 5e-3;
  const auto h = train::train(m, samples, cfg).history;
  CHECK(h.back().total < h.front().total);
  CHECK(smoothed_loss(h, 15) < smoothed_loss(h, 5));
  CHECK_THROWS_AS(smoothed_loss(h, 16), InputError);
}

TEST_CASE("manifest round trip") {
  DatasetManifest m;
  m.prior_graph = "prior.json";
  m.truth_graph = "truth.json";
  m.entries.push_back({"day_000.csv", TaskKind::Imputation, small_params(), "imputation"});
  m.entries.push_back({"day_000.csv", TaskKind::Forecast, small_params(), "forecast"});
  m.entries.push_back({"day_001.csv", TaskKind::SuperResolution, small_params(), "superres"});
  const auto dir = std::filesystem::temp_directory_path() / "cmllm_manifest_test";
  std::filesystem::create_directories(dir);
  write_manifest(dir / "manifest.json", m);
  const auto back = read_manifest(dir / "manifest.json");
  REQUIRE(back.entries.size() == 3);
  CHECK(back.entries[2].task == TaskKind::SuperResolution);
  CHECK(back.entries[1].params.horizon == 6);
  CHECK(back.prior_graph == "prior.json");
  CHECK(manifest_files(back) == std::vector<std::string>{"day_000.csv", "day_001.csv"});
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_manifest(dir / "manifest.json"), IoError);
}

TEST_CASE("merged reconstruction keeps observed cells bit-equal") {
  const auto raw = plant_days(1).front();
  const auto norm = instance_normalize(raw);
  const auto mask = generate_task_mask(TaskKind::SuperResolution, small_params(), 6, raw.length(), 0);
  CHECK(mask.count() == 6u * 16u);  // two of every three steps
  Matrix pred = Matrix::Constant(6, raw.length(), 0.5);
  const auto out = merge_reconstruction(raw, mask, pred, norm.params);
  for (Eigen::Index e = 0; e < 6; ++e) {
    for (Eigen::Index t = 0; t < raw.length(); ++t) {
      if (!mask.at(e, t)) {
        CHECK(out.values(e, t) == raw.values(e, t));
      } else if (!norm.params.degenerate[static_cast<std::size_t>(e)]) {
        CHECK(out.values(e, t) ==
              doctest::Approx(0.5 * (norm.params.max[static_cast<std::size_t>(e)] - norm.params.min[static_cast<std::size_t>(e)]) +
                              norm.params.min[static_cast<std::size_t>(e)]));
      }
    }
  }
  CHECK_THROWS_AS(merge_reconstruction(raw, MaskMatrix::zeros(6, 3), pred, norm.params), InputError);
}

TEST_CASE("replace_mask rebuilds the masked input") {
  auto s = small_dataset(1).front();
  MaskMatrix m = MaskMatrix::zeros(6, 24);
  m.values(2, 5) = 1;
  replace_mask(s, m);
  CHECK(s.mask.values == m.values);
  CHECK(s.input.values(2, 5) == kMaskSentinel);
  CHECK(s.input.values(2, 6) == s.target(2, 6));
  CHECK(s.input.mask.count() == 1u);
  CHECK_THROWS_AS(replace_mask(s, MaskMatrix::zeros(6, 23)), InputError);
}

TEST_CASE("build_sample pads short days and rejects long ones") {
  const auto raw = plant_days(1).front();
  const auto norm = instance_normalize(raw);
  std::mt19937_64 rng(0);
  SampleOptions opts;
  opts.l_fix = 30;
  const auto s = build_sample(norm.series, TaskKind::Forecast, small_params(), plant::ground_truth_graph(), rng, opts,
                              norm.params);
  CHECK(s.valid_length == 24);
  CHECK(s.l_fix() == 30);
  for (Eigen::Index t = 24; t < 30; ++t) {
    CHECK(s.input.values.col(t).isConstant(kMaskSentinel));
    CHECK(s.input.mask.values.col(t).isZero());
  }
  CHECK(s.mask.values.rightCols(6).isOnes());

  opts.l_fix = 20;
  CHECK_THROWS_AS(build_sample(norm.series, TaskKind::Forecast, small_params(), plant::ground_truth_graph(), rng, opts),
                  InputError);
  opts.truncate = true;
  CHECK(build_sample(norm.series, TaskKind::Forecast, small_params(), plant::ground_truth_graph(), rng, opts).valid_length ==
        20);
  CHECK_THROWS_AS(build_sample(raw, TaskKind::Forecast, small_params(), plant::ground_truth_graph(), rng, opts), InputError);
}
