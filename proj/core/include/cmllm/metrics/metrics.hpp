#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cmllm/series.hpp"

namespace cmllm::metrics {

/// Cells selected by `scope` (nonzero entries); an empty scope selects all.
double mae(std::span<const double> y, std::span<const double> yhat, std::span<const std::uint8_t> scope = {});
double rmse(std::span<const double> y, std::span<const double> yhat, std::span<const std::uint8_t> scope = {});

/// m feature vectors of dimension p with their mean and sample covariance.
struct FidFeatureSet {
  Eigen::MatrixXd features;  // m x p
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  static FidFeatureSet from_features(const Eigen::MatrixXd& features);
  /// Non-overlapping windows of `window` steps; a trailing partial window is dropped.
  static FidFeatureSet from_windows(std::span<const double> series, int window);
  static FidFeatureSet from_windows(const std::vector<std::span<const double>>& series, int window);

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

/// Frechet distance between Gaussian fits. Throws NumericError when a
/// covariance or the inner product has an eigenvalue below -1e-8.
double fid(const FidFeatureSet& real, const FidFeatureSet& gen);
/// Same formula from moments directly.
double frechet_distance(const Eigen::VectorXd& mu_r, const Eigen::MatrixXd& cov_r, const Eigen::VectorXd& mu_g,
                        const Eigen::MatrixXd& cov_g);

/// Full-lattice DTW with steps (1,0), (0,1), (1,1) and |a - b| cost.
double dtw(std::span<const double> r, std::span<const double> g);

struct CorrDiscrepancy {
  double value = 0.0;
  /// Pairs left out because a variable had zero variance in either matrix.
  std::size_t skipped_pairs = 0;
};

/// Sum over i < j of |corr_out(i, j) - corr_gt(i, j)| for E x L matrices.
CorrDiscrepancy corr_discrepancy(const Matrix& out, const Matrix& gt);

struct PowerRoles {
  int total = -1;
  int pv = -1;
  int storage = -1;
};

/// Looks up total_output, pv_output and storage_output.
PowerRoles power_roles(const std::vector<std::string>& names);

/// Mean |R_true - R_pred| with R = total - (pv + storage), on raw values.
double power_balance_mae(const TimeSeriesMatrix& pred, const TimeSeriesMatrix& truth, const PowerRoles& roles);

enum class Scope { AllPoints, Masked };

struct VariableMetrics {
  std::string name;
  std::optional<double> mae;
  std::optional<double> rmse;
  std::optional<double> fid;
  double dtw = 0.0;
};

struct MetricReport {
  Scope scope = Scope::AllPoints;
  std::vector<VariableMetrics> variables;
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> fid;
  double dtw = 0.0;
  double corr_discrepancy = 0.0;
  std::size_t corr_skipped_pairs = 0;
  std::optional<double> power_balance_mae;
  std::size_t cells = 0;
  std::size_t series = 0;
};

nlohmann::json to_json(const MetricReport& r);
std::string csv_header();
std::string csv_row(const MetricReport& r, const std::string& label);

struct EvalOptions {
  Scope scope = Scope::AllPoints;
  int fid_window = 32;
};

/// Pools reconstructions of several series. MAE/RMSE pool the selected
/// cells, DTW and D average over series, FID pools windows per variable and
/// P_MAE pools timesteps (only when the role variables are present).
class MetricAccumulator {
 public:
  explicit MetricAccumulator(EvalOptions opts = {}) : opts_(opts) {}

  /// Raw-valued prediction and truth with identical names and shape. `mask`
  /// selects cells for the masked scope.
  void add(const TimeSeriesMatrix& pred, const TimeSeriesMatrix& truth, const MaskMatrix* mask = nullptr);
  MetricReport report() const;

 private:
  EvalOptions opts_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> pred_cells_, true_cells_;
  std::vector<std::vector<std::vector<double>>> pred_series_, true_series_;
  std::vector<double> dtw_sum_;
  double corr_sum_ = 0.0;
  std::size_t corr_skipped_ = 0;
  double pbal_sum_ = 0.0;
  std::size_t pbal_steps_ = 0;
  bool has_roles_ = false;
  std::size_t series_ = 0;
};

MetricReport evaluate(const TimeSeriesMatrix& pred, const TimeSeriesMatrix& truth, const MaskMatrix* mask = nullptr,
                      const EvalOptions& opts = {});

}  // namespace cmllm::metrics
