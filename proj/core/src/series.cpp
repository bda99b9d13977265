#include "cmllm/series.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "cmllm/error.hpp"

namespace cmllm {

void TimeSeriesMatrix::validate() const {
  if (values.rows() < 1 || values.cols() < 1) {
    throw InputError("time series must have at least one variable and one step");
  }
  if (static_cast<Eigen::Index>(variable_names.size()) != values.rows()) {
    std::ostringstream os;
    os << "expected " << values.rows() << " variable names, got " << variable_names.size();
    throw InputError(os.str());
  }
  std::set<std::string> seen(variable_names.begin(), variable_names.end());
  if (seen.size() != variable_names.size()) throw InputError("variable names must be unique");
  if (resolution_minutes < 1) throw InputError("resolution_minutes must be positive");
  if (is_normalized) {
    for (Eigen::Index e = 0; e < values.rows(); ++e) {
      for (Eigen::Index t = 0; t < values.cols(); ++t) {
        const double v = values(e, t);
        if (!(v >= 0.0 && v <= 1.0)) {
          std::ostringstream os;
          os << "normalized value out of [0,1] at (" << e << "," << t << "): " << v;
          throw InputError(os.str());
        }
      }
    }
  }
}

int TimeSeriesMatrix::index_of(const std::string& name) const {
  auto it = std::find(variable_names.begin(), variable_names.end(), name);
  return it == variable_names.end() ? -1 : static_cast<int>(it - variable_names.begin());
}

MaskMatrix MaskMatrix::zeros(Eigen::Index rows, Eigen::Index cols) {
  MaskMatrix m;
  m.values.setZero(rows, cols);
  return m;
}

std::size_t MaskMatrix::count() const {
  return static_cast<std::size_t>(values.cast<std::size_t>().sum());
}

NormalizedSeries instance_normalize(const TimeSeriesMatrix& raw) {
  if (raw.is_normalized) throw InputError("instance_normalize expects raw (unnormalized) data");
  raw.validate();
  const Eigen::Index E = raw.num_variables();
  const Eigen::Index L = raw.length();
  for (Eigen::Index e = 0; e < E; ++e) {
    for (Eigen::Index t = 0; t < L; ++t) {
      if (!std::isfinite(raw.values(e, t))) {
        std::ostringstream os;
        os << "non-finite value at variable " << e << " ('" << raw.variable_names[e] << "'), step " << t;
        throw InputError(os.str());
      }
    }
  }

  NormalizedSeries out;
  out.series = raw;
  out.series.is_normalized = true;
  out.params.min.resize(E);
  out.params.max.resize(E);
  out.params.degenerate.resize(E);
  for (Eigen::Index e = 0; e < E; ++e) {
    const double lo = raw.values.row(e).minCoeff();
    const double hi = raw.values.row(e).maxCoeff();
    out.params.min[e] = lo;
    out.params.max[e] = hi;
    const bool degenerate = !(hi > lo);
    out.params.degenerate[e] = degenerate;
    if (degenerate) {
      out.series.values.row(e).setZero();
    } else {
      const double span = hi - lo;
      for (Eigen::Index t = 0; t < L; ++t) {
        // Clamp guards the last ulp; the endpoints map exactly to 0 and 1.
        out.series.values(e, t) = std::clamp((raw.values(e, t) - lo) / span, 0.0, 1.0);
      }
    }
  }
  return out;
}

TimeSeriesMatrix denormalize(const TimeSeriesMatrix& normalized, const NormalizationParams& params) {
  const auto E = static_cast<std::size_t>(normalized.num_variables());
  if (params.min.size() != E || params.max.size() != E || params.degenerate.size() != E) {
    std::ostringstream os;
    os << "normalization params cover " << params.min.size() << " variables, series has " << E;
    throw InputError(os.str());
  }
  TimeSeriesMatrix out = normalized;
  out.is_normalized = false;
  for (std::size_t e = 0; e < E; ++e) {
    const auto row = static_cast<Eigen::Index>(e);
    if (params.degenerate[e]) {
      out.values.row(row).setConstant(params.min[e]);
    } else {
      const double span = params.max[e] - params.min[e];
      out.values.row(row) = (normalized.values.row(row).array() * span + params.min[e]).matrix();
    }
  }
  return out;
}

Eigen::Index imputation_segment_length(double draw, Eigen::Index length) {
  if (!(draw >= 1.0)) return 0;
  const double floored = std::floor(draw);
  if (floored >= static_cast<double>(length)) return length;
  return static_cast<Eigen::Index>(floored);
}

MaskMatrix gen_mask_imputation(Eigen::Index num_variables, Eigen::Index length,
                               const ImputationMaskConfig& cfg) {
  if (length < 1) throw InputError("mask length must be at least 1");
  if (cfg.mu < 0.0 || cfg.sigma < 0.0) throw InputError("imputation mu and sigma must be nonnegative");
  MaskMatrix mask = MaskMatrix::zeros(num_variables, length);
  std::mt19937_64 rng(cfg.rng_seed);
  std::normal_distribution<double> unit_normal(0.0, 1.0);
  for (Eigen::Index e = 0; e < num_variables; ++e) {
    for (int s = 0; s < cfg.segments_per_variable; ++s) {
      const double draw = cfg.mu + cfg.sigma * unit_normal(rng);
      const Eigen::Index len = imputation_segment_length(draw, length);
      if (len == 0) continue;
      // 0-based start in [0, L - len], i.e. [1, L - len + 1] one-based.
      std::uniform_int_distribution<Eigen::Index> start_dist(0, length - len);
      const Eigen::Index start = start_dist(rng);
      mask.values.row(e).segment(start, len).setOnes();
    }
  }
  return mask;
}

MaskMatrix gen_mask_forecast(Eigen::Index num_variables, Eigen::Index length, Eigen::Index horizon) {
  if (horizon < 0 || horizon > length) {
    std::ostringstream os;
    os << "forecast horizon " << horizon << " outside [0, " << length << "]";
    throw InputError(os.str());
  }
  MaskMatrix mask = MaskMatrix::zeros(num_variables, length);
  if (horizon > 0) mask.values.rightCols(horizon).setOnes();
  return mask;
}

MaskMatrix gen_mask_superres(Eigen::Index num_variables, Eigen::Index length, int factor) {
  if (factor < 1) throw InputError("super-resolution factor must be >= 1");
  MaskMatrix mask = MaskMatrix::zeros(num_variables, length);
  for (Eigen::Index t = 0; t < length; ++t) {
    if (t % factor != 0) mask.values.col(t).setOnes();
  }
  return mask;
}

MaskedSeries apply_mask(const TimeSeriesMatrix& normalized, const MaskMatrix& mask) {
  if (!normalized.is_normalized) throw InputError("apply_mask requires normalized data");
  if (mask.rows() != normalized.values.rows() || mask.cols() != normalized.values.cols()) {
    std::ostringstream os;
    os << "mask shape " << mask.rows() << "x" << mask.cols() << " does not match series "
       << normalized.values.rows() << "x" << normalized.values.cols();
    throw InputError(os.str());
  }
  MaskedSeries out;
  out.mask = mask;
  out.values = normalized.values;
  for (Eigen::Index e = 0; e < out.values.rows(); ++e) {
    for (Eigen::Index t = 0; t < out.values.cols(); ++t) {
      if (mask.at(e, t)) out.values(e, t) = kMaskSentinel;
    }
  }
  return out;
}

}  // namespace cmllm
