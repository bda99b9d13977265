#include "cmllm/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include <fmt/format.h>

#include "cmllm/error.hpp"

namespace cmllm::train {

void TrainConfig::validate() const {
  if (epochs < 0) throw InputError("epochs must be nonnegative");
  if (batch_size < 1) throw InputError("batch_size must be positive");
  if (!(adam.lr >= 0.0)) throw InputError("learning rate must be nonnegative");
  if (threads < 1) throw InputError("threads must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("dropout must lie in [0,1)");
  loss.validate();
}

AdjacencyTable build_adjacency(const std::vector<SftSample>& samples, const model::DgpConfig& cfg) {
  AdjacencyTable table;
  std::vector<std::pair<const causal::CausalGraph*, const std::vector<std::string>*>> keys;
  for (const auto& s : samples) {
    std::size_t k = 0;
    while (k < keys.size() && !(*keys[k].first == s.graph && *keys[k].second == s.variable_names)) ++k;
    if (k == keys.size()) {
      keys.emplace_back(&s.graph, &s.variable_names);
      table.unique.push_back(model::dgp_adjacency(s.graph, s.variable_names, cfg));
    }
    table.index.push_back(k);
  }
  return table;
}

std::vector<std::vector<std::size_t>> plan_batches(const std::vector<SftSample>& samples, int batch_size,
                                                   bool use_prompt, std::mt19937_64& rng) {
  std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t plen = use_prompt ? samples[i].tokens.size() : 0;
    groups[{static_cast<int>(samples[i].task), plen}].push_back(i);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [key, idx] : groups) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); i += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(idx.size(), i + static_cast<std::size_t>(batch_size));
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i), idx.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

namespace {

template <typename F>
void parallel_for(std::size_t n, int threads, F&& body) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

template <typename T>
LossBreakdown batch_gradients(const model::CmModel<T>& model, const nn::ParameterStore<T>& store, const Batch& batch,
                              const std::vector<const model::DgpAdjacency*>& adjacency, const LossConfig& loss,
                              nn::GradientBuffer<T>* grads, int threads, std::uint64_t dropout_seed, double dropout) {
  const std::size_t B = batch.size();
  if (adjacency.size() != B) throw InputError("need one adjacency per batch sample");
  const std::size_t l_fix = batch.inputs.dim(1), F = batch.inputs.dim(2);
  std::vector<model::SampleCache<T>> caches(B);
  nn::Tensor<T> pred({B, l_fix, F});
  parallel_for(B, threads, [&](std::size_t i) {
    std::mt19937_64 rng(mix(dropout_seed, i));
    nn::ForwardContext ctx{dropout > 0.0 ? &rng : nullptr, dropout};
    const nn::Mat<T> x = batch.inputs.slice(i).template cast<T>();
    pred.slice(i) = model.forward(store, x, batch.prompts[i], *adjacency[i], caches[i], ctx);
  });
  nn::Tensor<T> dpred;
  LossBreakdown out = compute_loss(pred, batch, loss, grads ? &dpred : nullptr);
  if (!std::isfinite(out.total)) return out;
  if (grads) {
    std::vector<nn::GradientBuffer<T>> per_sample(B, nn::GradientBuffer<T>(store));
    parallel_for(B, threads, [&](std::size_t i) {
      model.backward(store, caches[i], nn::Mat<T>(dpred.slice(i)), per_sample[i]);
    });
    grads->set_zero();
    for (const auto& g : per_sample) grads->add(g);
  }
  return out;
}

template <typename T>
nn::Tensor<T> predict_batch(const model::CmModel<T>& model, const Batch& batch,
                            const std::vector<const model::DgpAdjacency*>& adjacency) {
  const std::size_t B = batch.size();
  nn::Tensor<T> pred({B, batch.inputs.dim(1), batch.inputs.dim(2)});
  model::SampleCache<T> cache;
  for (std::size_t i = 0; i < B; ++i) {
    const nn::Mat<T> x = batch.inputs.slice(i).template cast<T>();
    pred.slice(i) = model.forward(model.params(), x, batch.prompts[i], *adjacency[i], cache);
  }
  return pred;
}

TrainResult train(model::CmModel<float>& model, const std::vector<SftSample>& samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (samples.empty()) throw InputError("training set is empty");
  const AdjacencyTable adjacency = build_adjacency(samples, model.config().dgp);
  nn::AdamState<float> adam(model.params());
  nn::GradientBuffer<float> grads(model.params());
  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto plan = plan_batches(samples, cfg.batch_size, model.config().use_prompt, rng);
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t bi = 0; bi < plan.size(); ++bi) {
      std::vector<const SftSample*> members;
      std::vector<const model::DgpAdjacency*> adj;
      for (std::size_t i : plan[bi]) {
        members.push_back(&samples[i]);
        adj.push_back(adjacency.at(i));
      }
      const Batch batch = collate(members);
      const LossBreakdown loss =
          batch_gradients(model, model.params(), batch, adj, cfg.loss, &grads, cfg.threads,
                          mix(cfg.seed, static_cast<std::uint64_t>(epoch) * 1000003ULL + bi), cfg.dropout);
      if (!std::isfinite(loss.total)) {
        throw NumericError(fmt::format("non-finite loss at epoch {} batch {} ({} task): L_acc={} L_mask={}", epoch,
                                       bi, task_name(batch.task), loss.acc, loss.mask));
      }
      nn::adam_step(model.params(), grads, adam, cfg.adam);
      const double w = static_cast<double>(batch.size());
      stats.acc += loss.acc * w;
      stats.mask += loss.mask * w;
      stats.total += loss.total * w;
    }
    const double n = static_cast<double>(samples.size());
    stats.acc /= n;
    stats.mask /= n;
    stats.total /= n;
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

double smoothed_loss(const std::vector<EpochStats>& history, int epoch, int window) {
  if (epoch < 1 || epoch > static_cast<int>(history.size())) throw InputError("epoch outside the loss history");
  const int first = std::max(1, epoch - window + 1);
  double sum = 0.0;
  for (int e = first; e <= epoch; ++e) sum += history[static_cast<std::size_t>(e - 1)].total;
  return sum / (epoch - first + 1);
}

void write_loss_history(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss history to '" + path.string() + "'");
  out << "epoch,L_acc,L_mask,total\n";
  for (const auto& h : history) out << fmt::format("{},{:.10g},{:.10g},{:.10g}\n", h.epoch, h.acc, h.mask, h.total);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

template LossBreakdown batch_gradients<float>(const model::CmModel<float>&, const nn::ParameterStore<float>&,
                                              const Batch&, const std::vector<const model::DgpAdjacency*>&,
                                              const LossConfig&, nn::GradientBuffer<float>*, int, std::uint64_t,
                                              double);
template LossBreakdown batch_gradients<double>(const model::CmModel<double>&, const nn::ParameterStore<double>&,
                                               const Batch&, const std::vector<const model::DgpAdjacency*>&,
                                               const LossConfig&, nn::GradientBuffer<double>*, int, std::uint64_t,
                                               double);
template nn::Tensor<float> predict_batch<float>(const model::CmModel<float>&, const Batch&,
                                                const std::vector<const model::DgpAdjacency*>&);
template nn::Tensor<double> predict_batch<double>(const model::CmModel<double>&, const Batch&,
                                                  const std::vector<const model::DgpAdjacency*>&);

}  // namespace cmllm::train
