#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>

#include "cmllm/nn/parameters.hpp"

namespace cmllm::nn {

struct GradCheckOptions {
  /// Entries sampled per parameter group (all entries when the group is smaller).
  std::size_t samples_per_group = 200;
  double step = 1e-5;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GroupReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::map<std::string, GroupReport> groups;
  /// Frozen parameters whose analytic gradient entry was not exactly zero.
  std::size_t frozen_nonzero = 0;
};

using LossFn = std::function<double(const ParameterStore<double>&)>;
using GradFn = std::function<GradientBuffer<double>(const ParameterStore<double>&)>;

/// Central finite differences against the analytic gradient on a random
/// subset of trainable entries, grouped by Parameter::group.
GradCheckReport gradient_check(ParameterStore<double>& store, const LossFn& loss, const GradFn& analytic,
                               const GradCheckOptions& opts = {});

}  // namespace cmllm::nn
