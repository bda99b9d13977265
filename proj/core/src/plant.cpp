#include "cmllm/plant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cmllm/error.hpp"

namespace cmllm::plant {
namespace {

double clear_sky(const PlantConfig& cfg, double hour) {
  if (hour <= cfg.sunrise_hour || hour >= cfg.sunset_hour) return 0.0;
  const double phase = (hour - cfg.sunrise_hour) / (cfg.sunset_hour - cfg.sunrise_hour);
  return cfg.peak_irradiance * std::pow(std::sin(std::numbers::pi * phase), 1.5);
}

// AR(1) coefficient for a process with the given time constant sampled every dt.
double ar_coefficient(double time_constant_minutes, double dt_minutes) {
  if (time_constant_minutes <= 0.0) return 0.0;
  return std::exp(-dt_minutes / time_constant_minutes);
}

// Unit-variance stationary AR(1).
class Ar1 {
 public:
  Ar1(double phi, std::mt19937_64& rng) : phi_(phi), innovation_(std::sqrt(1.0 - phi * phi)) {
    state_ = normal_(rng);
  }
  double next(std::mt19937_64& rng) {
    state_ = phi_ * state_ + innovation_ * normal_(rng);
    return state_;
  }

 private:
  double phi_;
  double innovation_;
  double state_ = 0.0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace

std::vector<std::string> variable_names() {
  return {kIrradiance, kTemperature, kPvOutput, kTotalOutput, kStorageOutput, kSoc};
}

void PlantConfig::validate() const {
  if (resolution_minutes < 1) throw InputError("resolution_minutes must be positive");
  if (day_minutes < resolution_minutes) throw InputError("day must hold at least one step");
  if (day_minutes % resolution_minutes != 0) throw InputError("resolution_minutes must divide the day length");
  if (!(pv_capacity_kw > 0.0) || !(storage_capacity_kwh > 0.0)) throw InputError("capacities must be positive");
  if (!(initial_soc >= 0.0 && initial_soc <= 1.0)) throw InputError("initial SOC must lie in [0,1]");
  if (initial_soc_spread < 0.0) throw InputError("initial SOC spread must be nonnegative");
  if (!(cloud_noise_amplitude >= 0.0 && cloud_noise_amplitude <= 1.0)) {
    throw InputError("cloud noise amplitude must lie in [0,1]");
  }
  if (!(sunset_hour > sunrise_hour)) throw InputError("sunset must follow sunrise");
  if (meter_noise_std_kw < 0.0 || demand_noise_std_kw < 0.0 || temperature_noise_std < 0.0) {
    throw InputError("noise levels must be nonnegative");
  }
}

std::uint64_t day_seed(std::uint64_t base_seed, std::size_t day_index) {
  // splitmix64 finalizer over (seed, index)
  std::uint64_t z = base_seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(day_index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

TimeSeriesMatrix generate_day(const PlantConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int steps = cfg.steps_per_day();
  const double dt_min = cfg.resolution_minutes;
  const double dt_h = dt_min / 60.0;

  const double temp_mean = cfg.temperature_mean + cfg.temperature_day_spread * (2.0 * unit(rng) - 1.0);
  const double demand_scale = 1.0 + cfg.demand_day_variation * (2.0 * unit(rng) - 1.0);
  double soc = std::clamp(cfg.initial_soc + cfg.initial_soc_spread * (2.0 * unit(rng) - 1.0), 0.0, 1.0);

  Ar1 cloud(ar_coefficient(cfg.cloud_time_constant_minutes, dt_min), rng);
  Ar1 temp_noise(ar_coefficient(30.0, dt_min), rng);
  Ar1 demand_noise(ar_coefficient(cfg.demand_noise_time_constant_minutes, dt_min), rng);

  TimeSeriesMatrix day;
  day.variable_names = variable_names();
  day.resolution_minutes = cfg.resolution_minutes;
  day.values.resize(6, steps);

  for (int t = 0; t < steps; ++t) {
    const double hour = t * dt_h;
    const double cover = 0.5 * (1.0 + std::tanh(cloud.next(rng)));
    const double irradiance = clear_sky(cfg, hour) * (1.0 - cfg.cloud_noise_amplitude * cover);

    const double temperature = temp_mean +
                               cfg.temperature_diurnal_amplitude *
                                   std::cos(2.0 * std::numbers::pi * (hour - cfg.temperature_peak_hour) / 24.0) +
                               cfg.temperature_irradiance_gain * irradiance +
                               cfg.temperature_noise_std * temp_noise.next(rng);

    const double pv = std::max(
        0.0, cfg.pv_capacity_kw * (irradiance / 1000.0) * (1.0 - cfg.temperature_coefficient * (temperature - 25.0)));

    const double shape =
        0.5 * (1.0 + std::cos(4.0 * std::numbers::pi * (hour - cfg.demand_morning_peak_hour) / 24.0));
    const double demand = std::max(0.0, demand_scale * (cfg.demand_base_kw + cfg.demand_amplitude_kw * shape) +
                                            cfg.demand_noise_std_kw * demand_noise.next(rng));

    // Positive storage output discharges the battery.
    double storage = demand - pv;
    double next_soc = soc - storage * dt_h / cfg.storage_capacity_kwh;
    if (next_soc < 0.0) {
      storage = soc * cfg.storage_capacity_kwh / dt_h;
      next_soc = 0.0;
    } else if (next_soc > 1.0) {
      storage = -(1.0 - soc) * cfg.storage_capacity_kwh / dt_h;
      next_soc = 1.0;
    }
    soc = next_soc;
    const double total = pv + storage;
    const double metered_storage =
        cfg.meter_noise_std_kw > 0.0 ? storage + cfg.meter_noise_std_kw * normal(rng) : storage;

    day.values(0, t) = irradiance;
    day.values(1, t) = temperature;
    day.values(2, t) = pv;
    day.values(3, t) = total;
    day.values(4, t) = metered_storage;
    day.values(5, t) = soc;
  }
  return day;
}

causal::PriorGraph physical_prior() {
  causal::PriorGraph g;
  g.nodes = variable_names();
  g.edges = {{0, 2}, {1, 2}, {2, 4}, {4, 5}};
  return g;
}

causal::CausalGraph ground_truth_graph() {
  causal::CausalGraph g;
  g.nodes = variable_names();
  for (const auto& [u, v] : physical_prior().edges) g.edges.push_back({u, v, 1.0, true});
  g.edges.push_back({3, 4, 1.0, false});
  g.edges.push_back({0, 1, 1.0, false});
  return g;
}

PlantDataset generate_dataset(const PlantConfig& cfg, std::size_t n_days) {
  if (n_days < 1) throw InputError("n_days must be at least 1");
  PlantDataset ds;
  ds.days.reserve(n_days);
  for (std::size_t d = 0; d < n_days; ++d) ds.days.push_back(generate_day(cfg, day_seed(cfg.seed, d)));
  ds.prior = physical_prior();
  ds.truth = ground_truth_graph();
  return ds;
}

causal::SampleMatrix pool_days(const std::vector<TimeSeriesMatrix>& days) {
  if (days.empty()) return {};
  Eigen::Index rows = 0;
  const Eigen::Index E = days.front().num_variables();
  for (const auto& d : days) {
    if (d.num_variables() != E) throw InputError("pooled days must share their variables");
    rows += d.length();
  }
  causal::SampleMatrix out(rows, E);
  Eigen::Index offset = 0;
  for (const auto& d : days) {
    out.middleRows(offset, d.length()) = d.values.transpose();
    offset += d.length();
  }
  return out;
}

}  // namespace cmllm::plant

namespace cmllm::plant {

#define CMLLM_PLANT_FIELDS(X)                                                                                \
  X(resolution_minutes) X(day_minutes) X(pv_capacity_kw) X(storage_capacity_kwh) X(initial_soc)               \
  X(initial_soc_spread) X(temperature_coefficient) X(peak_irradiance) X(sunrise_hour) X(sunset_hour)          \
  X(cloud_noise_amplitude) X(cloud_time_constant_minutes) X(temperature_mean) X(temperature_day_spread)       \
  X(temperature_diurnal_amplitude) X(temperature_peak_hour) X(temperature_irradiance_gain)                    \
  X(temperature_noise_std) X(demand_base_kw) X(demand_amplitude_kw) X(demand_morning_peak_hour)               \
  X(demand_day_variation) X(demand_noise_std_kw) X(demand_noise_time_constant_minutes) X(meter_noise_std_kw)  \
  X(seed)

void to_json(nlohmann::json& j, const PlantConfig& c) {
  j = nlohmann::json::object();
#define X(f) j[#f] = c.f;
  CMLLM_PLANT_FIELDS(X)
#undef X
}

void from_json(const nlohmann::json& j, PlantConfig& c) {
  if (!j.is_object()) throw InputError("plant configuration must be a JSON object");
  static const std::vector<std::string> known = {
#define X(f) #f,
      CMLLM_PLANT_FIELDS(X)
#undef X
  };
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw InputError("unknown plant configuration key '" + key + "'");
    }
  }
#define X(f) c.f = j.value(#f, c.f);
  CMLLM_PLANT_FIELDS(X)
#undef X
}

#undef CMLLM_PLANT_FIELDS

}  // namespace cmllm::plant
