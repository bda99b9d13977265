#include "cmllm/train/batch.hpp"

#include <algorithm>

#include "cmllm/error.hpp"

namespace cmllm::train {

Batch collate(const std::vector<const SftSample*>& samples) {
  if (samples.empty()) throw InputError("cannot collate an empty sample list");
  const SftSample& first = *samples.front();
  const auto F = static_cast<std::size_t>(first.num_variables());
  const auto l_fix = static_cast<std::size_t>(first.l_fix());
  Batch b;
  b.task = first.task;
  for (const SftSample* s : samples) {
    if (static_cast<std::size_t>(s->num_variables()) != F) throw InputError("batch mixes variable counts");
    if (static_cast<std::size_t>(s->l_fix()) != l_fix) throw InputError("batch mixes input lengths");
    if (s->task != b.task) throw InputError("batch mixes tasks");
    b.max_length = std::max(b.max_length, s->valid_length);
  }
  const std::size_t B = samples.size(), Lm = static_cast<std::size_t>(b.max_length);
  b.inputs = nn::Tensor<double>({B, l_fix, F});
  b.targets = nn::Tensor<double>({B, Lm, F});
  b.masks = nn::Tensor<double>({B, Lm, F});
  b.padding = nn::Tensor<double>({B, Lm, F});
  for (std::size_t i = 0; i < B; ++i) {
    const SftSample& s = *samples[i];
    const auto L = static_cast<Eigen::Index>(s.valid_length);
    b.inputs.slice(i) = s.input.values.transpose();
    auto tgt = b.targets.slice(i);
    auto msk = b.masks.slice(i);
    auto pad = b.padding.slice(i);
    tgt.topRows(L) = s.target.transpose();
    msk.topRows(L) = s.mask.values.transpose().cast<double>();
    pad.bottomRows(static_cast<Eigen::Index>(Lm) - L).setOnes();
    b.valid_lengths.push_back(s.valid_length);
    b.prompts.push_back(s.tokens);
    b.samples.push_back(&s);
  }
  return b;
}

Batch collate(const std::vector<SftSample>& samples) {
  std::vector<const SftSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return collate(ptrs);
}

void LossConfig::validate() const {
  if (!(lambda1 >= 0.0)) throw InputError("lambda1 must be nonnegative");
}

template <typename T>
LossBreakdown compute_loss(const nn::Tensor<T>& pred, const Batch& batch, const LossConfig& cfg, nn::Tensor<T>* grad) {
  cfg.validate();
  const std::size_t B = batch.size();
  if (pred.rank() != 3 || pred.dim(0) != B || pred.dim(1) < static_cast<std::size_t>(batch.max_length) ||
      pred.dim(2) != batch.targets.dim(2)) {
    throw InputError("prediction shape " + nn::shape_string(pred.shape()) + " does not cover batch targets " +
                     nn::shape_string(batch.targets.shape()));
  }
  if (grad) *grad = nn::Tensor<T>(pred.shape());
  LossBreakdown out;
  for (std::size_t b = 0; b < B; ++b) {
    const auto L = static_cast<Eigen::Index>(batch.valid_lengths[b]);
    const nn::Mat<double> diff =
        pred.slice(b).topRows(L).template cast<double>() - batch.targets.slice(b).topRows(L);
    const auto m = batch.masks.slice(b).topRows(L);
    const double n_valid = static_cast<double>(diff.size());
    const double n_mask = m.sum();
    const double acc = diff.squaredNorm() / n_valid;
    const double mask = n_mask > 0.0 ? (diff.array().square() * m.array()).sum() / n_mask : 0.0;
    const double total = acc + cfg.lambda1 * mask;
    out.acc += acc;
    out.mask += mask;
    out.per_sample.push_back(total);
    if (grad) {
      nn::Mat<double> g = (2.0 / n_valid) * diff;
      if (n_mask > 0.0) g.array() += (2.0 * cfg.lambda1 / n_mask) * diff.array() * m.array();
      grad->slice(b).topRows(L) = (g / static_cast<double>(B)).template cast<T>();
    }
  }
  out.acc /= static_cast<double>(B);
  out.mask /= static_cast<double>(B);
  out.total = out.acc + cfg.lambda1 * out.mask;
  return out;
}

template LossBreakdown compute_loss<float>(const nn::Tensor<float>&, const Batch&, const LossConfig&,
                                           nn::Tensor<float>*);
template LossBreakdown compute_loss<double>(const nn::Tensor<double>&, const Batch&, const LossConfig&,
                                            nn::Tensor<double>*);

}  // namespace cmllm::train
