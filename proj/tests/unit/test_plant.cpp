#include <doctest.h>

#include "cmllm/error.hpp"
#include "cmllm/plant.hpp"

using namespace cmllm;

namespace {
constexpr int kIrr = 0, kTemp = 1, kPv = 2, kTotal = 3, kStorage = 4, kSoc = 5;
}

TEST_CASE("days carry the six plant variables") {
  const auto day = plant::generate_day({}, 1);
  CHECK(day.variable_names == plant::variable_names());
  CHECK(day.num_variables() == 6);
  CHECK(day.length() == 1440);
  CHECK(day.resolution_minutes == 1);
  CHECK_FALSE(day.is_normalized);
}

TEST_CASE("noise-free power conservation is exact") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    plant::PlantConfig cfg;
    cfg.resolution_minutes = 5;
    const auto day = plant::generate_day(cfg, seed);
    for (Eigen::Index t = 0; t < day.length(); ++t) {
      CHECK(day.values(kTotal, t) - (day.values(kPv, t) + day.values(kStorage, t)) == 0.0);
    }
  }
}

TEST_CASE("night steps have no irradiance and no PV") {
  plant::PlantConfig cfg;
  const auto day = plant::generate_day(cfg, 4);
  for (int t : {0, 60, 300, 1200, 1439}) {
    CHECK(day.values(kIrr, t) == 0.0);
    CHECK(day.values(kPv, t) == 0.0);
  }
  CHECK(day.values.row(kIrr).minCoeff() >= 0.0);
  CHECK(day.values(kIrr, 720) > 0.0);
}

TEST_CASE("SOC equals the cumulative storage integral") {
  plant::PlantConfig cfg;
  cfg.resolution_minutes = 10;
  cfg.storage_capacity_kwh = 1500.0;  // small battery so the bounds get hit
  bool saturated = false;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto day = plant::generate_day(cfg, seed);
    const double dt_h = cfg.resolution_minutes / 60.0;
    const double soc0 = day.values(kSoc, 0) + day.values(kStorage, 0) * dt_h / cfg.storage_capacity_kwh;
    double soc = soc0;
    for (Eigen::Index t = 0; t < day.length(); ++t) {
      soc -= day.values(kStorage, t) * dt_h / cfg.storage_capacity_kwh;
      CHECK(day.values(kSoc, t) == doctest::Approx(soc).epsilon(1e-9));
      CHECK(day.values(kSoc, t) >= 0.0);
      CHECK(day.values(kSoc, t) <= 1.0);
      saturated = saturated || day.values(kSoc, t) == 0.0 || day.values(kSoc, t) == 1.0;
    }
  }
  CHECK(saturated);
}

TEST_CASE("meter noise shows up as a residual of the configured size") {
  plant::PlantConfig cfg;
  cfg.meter_noise_std_kw = 5.0;
  const auto ds = plant::generate_dataset(cfg, 4);
  double ss = 0;
  int n = 0;
  for (const auto& day : ds.days) {
    for (Eigen::Index t = 0; t < day.length(); ++t) {
      const double r = day.values(kTotal, t) - day.values(kPv, t) - day.values(kStorage, t);
      ss += r * r;
      ++n;
    }
  }
  CHECK(std::abs(std::sqrt(ss / n) - 5.0) < 0.5);
}

TEST_CASE("every variable varies within a day") {
  plant::PlantConfig cfg;
  cfg.resolution_minutes = 15;
  const auto ds = plant::generate_dataset(cfg, 20);
  for (const auto& day : ds.days) {
    for (Eigen::Index e = 0; e < 6; ++e) CHECK(day.values.row(e).maxCoeff() > day.values.row(e).minCoeff());
  }
}

TEST_CASE("generation is deterministic in the seed") {
  plant::PlantConfig cfg;
  cfg.resolution_minutes = 30;
  const auto a = plant::generate_dataset(cfg, 3);
  const auto b = plant::generate_dataset(cfg, 3);
  for (int d = 0; d < 3; ++d) CHECK(a.days[d].values == b.days[d].values);
  cfg.seed = 2;
  CHECK(plant::generate_dataset(cfg, 1).days[0].values != a.days[0].values);
  CHECK(a.days[0].values != a.days[1].values);
}

TEST_CASE("resolution and day length set the step count") {
  plant::PlantConfig cfg;
  cfg.resolution_minutes = 15;
  CHECK(plant::generate_day(cfg, 0).length() == 96);
  cfg.resolution_minutes = 7;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = {};
  cfg.pv_capacity_kw = 0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = {};
  cfg.initial_soc = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InputError);
}

TEST_CASE("prior and truth graphs") {
  const auto prior = plant::physical_prior();
  CHECK(prior.nodes == plant::variable_names());
  CHECK(prior.edges.size() == 4);
  CHECK(prior.has_edge(kIrr, kPv));
  CHECK(prior.has_edge(kTemp, kPv));
  CHECK(prior.has_edge(kPv, kStorage));
  CHECK(prior.has_edge(kStorage, kSoc));
  const auto truth = plant::ground_truth_graph();
  CHECK(truth.adjacent(kTotal, kStorage));
  for (const auto& [u, v] : prior.edges) CHECK(truth.find(u, v) != nullptr);
}

TEST_CASE("pooled samples stack days row-wise") {
  plant::PlantConfig cfg;
  cfg.resolution_minutes = 60;
  const auto ds = plant::generate_dataset(cfg, 3);
  const auto pooled = plant::pool_days(ds.days);
  CHECK(pooled.rows() == 72);
  CHECK(pooled.cols() == 6);
  CHECK(pooled(24 + 5, 2) == ds.days[1].values(2, 5));
}

TEST_CASE("plant config JSON round trip rejects unknown keys") {
  plant::PlantConfig cfg;
  cfg.resolution_minutes = 15;
  cfg.meter_noise_std_kw = 2.5;
  const nlohmann::json j = cfg;
  const auto back = j.get<plant::PlantConfig>();
  CHECK(back.resolution_minutes == 15);
  CHECK(back.meter_noise_std_kw == 2.5);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"bogus": 1})").get<plant::PlantConfig>(), InputError);
}
