#pragma once

// Multivariate series data model, instance normalization and the mask
// generators that turn imputation, forecasting and super-resolution into a
// single "reconstruct the masked cells" problem.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cmllm {

/// Row-major so that one variable's series is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// E x L matrix: one row per variable, one column per time step.
struct TimeSeriesMatrix {
  Matrix values;
  std::vector<std::string> variable_names;
  int resolution_minutes = 1;
  bool is_normalized = false;

  Eigen::Index num_variables() const { return values.rows(); }
  Eigen::Index length() const { return values.cols(); }

  /// Throws InputError if shape, names or the normalized range are inconsistent.
  void validate() const;
  /// Index of a variable by name, or -1.
  int index_of(const std::string& name) const;
};

/// E x L matrix of {0,1}; 1 marks a cell the model has to reconstruct.
struct MaskMatrix {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;

  static MaskMatrix zeros(Eigen::Index rows, Eigen::Index cols);
  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  bool at(Eigen::Index e, Eigen::Index t) const { return values(e, t) != 0; }
  std::size_t count() const;
};

struct NormalizationParams {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<bool> degenerate;
};

/// Normalized series with masked cells replaced by the -1 sentinel.
struct MaskedSeries {
  Matrix values;
  MaskMatrix mask;
};

inline constexpr double kMaskSentinel = -1.0;

struct ImputationMaskConfig {
  double mu = 0.0;
  double sigma = 0.0;
  int segments_per_variable = 1;
  std::uint64_t rng_seed = 0;
};

struct NormalizedSeries {
  TimeSeriesMatrix series;
  NormalizationParams params;
};

/// Per-variable min-max scaling onto [0,1]. Constant rows map to 0 and are
/// flagged degenerate.
NormalizedSeries instance_normalize(const TimeSeriesMatrix& raw);
TimeSeriesMatrix denormalize(const TimeSeriesMatrix& normalized, const NormalizationParams& params);

/// Segment length for one imputation draw: max(0, floor(draw)), clipped to L.
Eigen::Index imputation_segment_length(double draw, Eigen::Index length);

/// Runs of ones with lengths drawn from N(mu, sigma^2); one independent draw
/// sequence per variable, overlapping runs merge.
MaskMatrix gen_mask_imputation(Eigen::Index num_variables, Eigen::Index length,
                               const ImputationMaskConfig& cfg);
/// Masks the last `horizon` columns of every variable.
MaskMatrix gen_mask_forecast(Eigen::Index num_variables, Eigen::Index length, Eigen::Index horizon);
/// Keeps columns 0, factor, 2*factor, ... and masks everything in between.
MaskMatrix gen_mask_superres(Eigen::Index num_variables, Eigen::Index length, int factor);

/// X~ = (1 - M) o X + (-1) M. Requires a normalized series.
MaskedSeries apply_mask(const TimeSeriesMatrix& normalized, const MaskMatrix& mask);

}  // namespace cmllm
