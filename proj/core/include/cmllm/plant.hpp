#pragma once

// Synthetic PV + storage plant. Days carry six variables with a known causal
// structure and exact power conservation (total = PV + storage) when meter
// noise is off.

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmllm/causal.hpp"
#include "cmllm/series.hpp"

namespace cmllm::plant {

inline constexpr const char* kIrradiance = "irradiance";
inline constexpr const char* kTemperature = "temperature";
inline constexpr const char* kPvOutput = "pv_output";
inline constexpr const char* kTotalOutput = "total_output";
inline constexpr const char* kStorageOutput = "storage_output";
inline constexpr const char* kSoc = "soc";

/// Variable order of every generated day.
std::vector<std::string> variable_names();

struct PlantConfig {
  int resolution_minutes = 1;
  int day_minutes = 1440;

  double pv_capacity_kw = 1000.0;
  double storage_capacity_kwh = 100000.0;
  double initial_soc = 0.5;
  /// Per-day initial SOC is drawn uniformly from initial_soc +/- this.
  double initial_soc_spread = 0.3;

  double temperature_coefficient = 0.004;  // 1/degC, PV derating above 25 degC

  double peak_irradiance = 1000.0;  // W/m^2, clear sky at solar noon
  double sunrise_hour = 6.0;
  double sunset_hour = 18.0;
  /// Clouds scale irradiance by a factor in [1 - amplitude, 1].
  double cloud_noise_amplitude = 0.5;
  double cloud_time_constant_minutes = 45.0;

  double temperature_mean = 20.0;
  double temperature_day_spread = 1.0;
  double temperature_diurnal_amplitude = 6.0;
  double temperature_peak_hour = 15.0;
  double temperature_irradiance_gain = 0.004;  // degC per W/m^2
  double temperature_noise_std = 0.5;

  /// Demand: base + amplitude * (1 + cos(4 pi (h - morning_peak) / 24)) / 2,
  /// scaled per day and perturbed by AR(1) noise.
  double demand_base_kw = 80.0;
  double demand_amplitude_kw = 250.0;
  double demand_morning_peak_hour = 9.0;
  double demand_day_variation = 0.05;
  double demand_noise_std_kw = 40.0;
  double demand_noise_time_constant_minutes = 60.0;

  double meter_noise_std_kw = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
  int steps_per_day() const { return day_minutes / resolution_minutes; }
};

/// Every PlantConfig field by name; missing keys keep their defaults,
/// unknown keys are rejected.
void to_json(nlohmann::json& j, const PlantConfig& c);
void from_json(const nlohmann::json& j, PlantConfig& c);

/// One day; values are raw (native units). `day_index` only seeds the day.
TimeSeriesMatrix generate_day(const PlantConfig& cfg, std::uint64_t day_seed);

/// Per-day seed used by generate_dataset for day `day_index`.
std::uint64_t day_seed(std::uint64_t base_seed, std::size_t day_index);

/// irradiance->PV, temperature->PV, PV->storage, storage->SOC.
causal::PriorGraph physical_prior();
/// Generator structure: the prior plus total->storage and irradiance->temperature.
causal::CausalGraph ground_truth_graph();

struct PlantDataset {
  std::vector<TimeSeriesMatrix> days;
  causal::PriorGraph prior;
  causal::CausalGraph truth;
};

PlantDataset generate_dataset(const PlantConfig& cfg, std::size_t n_days);

/// Stacks raw days into one n x E sample matrix (rows are time steps).
causal::SampleMatrix pool_days(const std::vector<TimeSeriesMatrix>& days);

}  // namespace cmllm::plant
