#pragma once

#include "cmllm/model/cm_model.hpp"
#include "cmllm/train/sample.hpp"

namespace cmllm::train {

/// Model output for one sample over its valid prefix, E x valid_length, normalized.
template <typename T>
Matrix predict_sample(const model::CmModel<T>& model, const SftSample& sample, const model::DgpAdjacency& adj);

/// Raw-valued reconstruction: masked cells take the denormalized prediction,
/// every other cell is copied from `raw` unchanged.
TimeSeriesMatrix merge_reconstruction(const TimeSeriesMatrix& raw, const MaskMatrix& mask, const Matrix& pred_normalized,
                                      const NormalizationParams& params);

}  // namespace cmllm::train
