#include "cmllm/train/reconstruct.hpp"

#include "cmllm/error.hpp"

namespace cmllm::train {

template <typename T>
Matrix predict_sample(const model::CmModel<T>& model, const SftSample& sample, const model::DgpAdjacency& adj) {
  const nn::Mat<T> x = model_input(sample).template cast<T>();
  const nn::Mat<T> y = model.forward(x, sample.tokens, adj);
  return y.topRows(sample.valid_length).transpose().template cast<double>();
}

TimeSeriesMatrix merge_reconstruction(const TimeSeriesMatrix& raw, const MaskMatrix& mask, const Matrix& pred_normalized,
                                      const NormalizationParams& params) {
  if (mask.rows() != raw.values.rows() || mask.cols() != raw.values.cols() ||
      pred_normalized.rows() != raw.values.rows() || pred_normalized.cols() != raw.values.cols()) {
    throw InputError("reconstruction inputs differ in shape");
  }
  TimeSeriesMatrix pred = raw;
  pred.values = pred_normalized;
  pred.is_normalized = true;
  const TimeSeriesMatrix denorm = denormalize(pred, params);
  TimeSeriesMatrix out = raw;
  for (Eigen::Index e = 0; e < raw.values.rows(); ++e) {
    for (Eigen::Index t = 0; t < raw.values.cols(); ++t) {
      if (mask.at(e, t)) out.values(e, t) = denorm.values(e, t);
    }
  }
  return out;
}

template Matrix predict_sample<float>(const model::CmModel<float>&, const SftSample&, const model::DgpAdjacency&);
template Matrix predict_sample<double>(const model::CmModel<double>&, const SftSample&, const model::DgpAdjacency&);

}  // namespace cmllm::train
