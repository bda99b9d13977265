#include "cmllm/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cmllm::nn {

GradCheckReport gradient_check(ParameterStore<double>& store, const LossFn& loss, const GradFn& analytic,
                               const GradCheckOptions& opts) {
  GradCheckReport report;
  const GradientBuffer<double> grads = analytic(store);

  // (param index, entry) pools per group.
  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> pools;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store.at(i);
    if (p.frozen) {
      for (double g : grads.at(i).storage()) report.frozen_nonzero += g != 0.0 ? 1 : 0;
      continue;
    }
    auto& pool = pools[p.group];
    for (std::size_t j = 0; j < p.value.size(); ++j) pool.emplace_back(i, j);
  }

  std::mt19937_64 rng(opts.seed);
  for (auto& [group, pool] : pools) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t n = std::min(opts.samples_per_group, pool.size());
    GroupReport& gr = report.groups[group];
    for (std::size_t s = 0; s < n; ++s) {
      const auto [pi, ej] = pool[s];
      double& w = store.at(pi).value[ej];
      const double saved = w;
      w = saved + opts.step;
      const double up = loss(store);
      w = saved - opts.step;
      const double down = loss(store);
      w = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double exact = grads.at(pi)[ej];
      const double abs_err = std::abs(numeric - exact);
      const double rel = abs_err / std::max({std::abs(numeric), std::abs(exact), opts.floor});
      gr.checked += 1;
      gr.max_rel_error = std::max(gr.max_rel_error, rel);
      gr.max_abs_error = std::max(gr.max_abs_error, abs_err);
    }
    report.checked += gr.checked;
    report.max_rel_error = std::max(report.max_rel_error, gr.max_rel_error);
  }
  return report;
}

}  // namespace cmllm::nn
