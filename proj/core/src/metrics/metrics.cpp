#include "cmllm/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "cmllm/error.hpp"
#include "cmllm/plant.hpp"

namespace cmllm::metrics {
namespace {

constexpr double kEigTolerance = 1e-8;

template <typename F>
std::size_t over_selection(std::span<const double> y, std::span<const double> yhat, std::span<const std::uint8_t> scope,
                           F&& f) {
  if (y.size() != yhat.size()) throw InputError("metric inputs differ in length");
  if (!scope.empty() && scope.size() != y.size()) throw InputError("metric scope mask differs in length");
  std::size_t n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!scope.empty() && scope[i] == 0) continue;
    f(y[i] - yhat[i]);
    ++n;
  }
  if (n == 0) throw InputError("metric selection is empty");
  return n;
}

/// Symmetric square root with clamping of small negative eigenvalues.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericError(std::string("eigendecomposition failed for ") + what);
  Eigen::VectorXd ev = eig.eigenvalues();
  // Rank-deficient covariances leave rounding noise scaled by the spectrum.
  const double tol = kEigTolerance * std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) {
      throw NumericError(fmt::format("{} is not positive semidefinite (eigenvalue {:.3g})", what, ev(i)));
    }
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

double pearson(std::span<const double> a, std::span<const double> b, bool& ok) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  ok = saa > 0.0 && sbb > 0.0;
  return ok ? sab / std::sqrt(saa * sbb) : 0.0;
}

std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace

double mae(std::span<const double> y, std::span<const double> yhat, std::span<const std::uint8_t> scope) {
  double sum = 0.0;
  const std::size_t n = over_selection(y, yhat, scope, [&](double d) { sum += std::abs(d); });
  return sum / static_cast<double>(n);
}

double rmse(std::span<const double> y, std::span<const double> yhat, std::span<const std::uint8_t> scope) {
  double sum = 0.0;
  const std::size_t n = over_selection(y, yhat, scope, [&](double d) { sum += d * d; });
  return std::sqrt(sum / static_cast<double>(n));
}

FidFeatureSet FidFeatureSet::from_features(const Eigen::MatrixXd& features) {
  if (features.rows() < 2 || features.cols() < 1) throw InputError("FID needs at least two feature vectors");
  FidFeatureSet s;
  s.features = features;
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
  return s;
}

FidFeatureSet FidFeatureSet::from_windows(std::span<const double> series, int window) {
  return from_windows(std::vector<std::span<const double>>{series}, window);
}

FidFeatureSet FidFeatureSet::from_windows(const std::vector<std::span<const double>>& series, int window) {
  if (window < 1) throw InputError("FID window must be positive");
  const auto w = static_cast<std::size_t>(window);
  std::size_t m = 0;
  for (const auto& s : series) m += s.size() / w;
  Eigen::MatrixXd f(static_cast<Eigen::Index>(m), window);
  Eigen::Index row = 0;
  for (const auto& s : series) {
    for (std::size_t k = 0; k + w <= s.size(); k += w, ++row) {
      for (std::size_t j = 0; j < w; ++j) f(row, static_cast<Eigen::Index>(j)) = s[k + j];
    }
  }
  return from_features(f);
}

double frechet_distance(const Eigen::VectorXd& mu_r, const Eigen::MatrixXd& cov_r, const Eigen::VectorXd& mu_g,
                        const Eigen::MatrixXd& cov_g) {
  if (mu_r.size() != mu_g.size() || cov_r.rows() != mu_r.size() || cov_g.rows() != mu_g.size()) {
    throw InputError("FID feature dimensions differ");
  }
  const Eigen::MatrixXd sr = psd_sqrt(cov_r, "real covariance");
  psd_sqrt(cov_g, "generated covariance");
  const Eigen::MatrixXd inner = sr * cov_g * sr;
  const double tr_sqrt = psd_sqrt(inner, "covariance product").trace();
  const double d = (mu_r - mu_g).squaredNorm() + cov_r.trace() + cov_g.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

double fid(const FidFeatureSet& real, const FidFeatureSet& gen) {
  if (real.size() < 2 || gen.size() < 2) throw InputError("FID needs at least two feature vectors per set");
  return frechet_distance(real.mean, real.cov, gen.mean, gen.cov);
}

double dtw(std::span<const double> r, std::span<const double> g) {
  if (r.empty() || g.empty()) throw InputError("DTW of an empty series");
  const std::size_t m = g.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= r.size(); ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = std::abs(r[i - 1] - g[j - 1]) + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

CorrDiscrepancy corr_discrepancy(const Matrix& out, const Matrix& gt) {
  if (out.rows() != gt.rows() || out.cols() != gt.cols()) throw InputError("correlation inputs differ in shape");
  if (out.rows() < 2) throw InputError("correlation discrepancy needs at least two variables");
  if (out.cols() < 2) throw InputError("correlation discrepancy needs at least two timesteps");
  CorrDiscrepancy d;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < out.rows(); ++j) {
      bool ok_out = false, ok_gt = false;
      const double co = pearson(row_span(out, i), row_span(out, j), ok_out);
      const double cg = pearson(row_span(gt, i), row_span(gt, j), ok_gt);
      if (!ok_out || !ok_gt) {
        ++d.skipped_pairs;
        continue;
      }
      d.value += std::abs(co - cg);
    }
  }
  return d;
}

PowerRoles power_roles(const std::vector<std::string>& names) {
  auto find = [&](const char* n) {
    const auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw InputError(std::string("power balance needs variable '") + n + "'");
    return static_cast<int>(it - names.begin());
  };
  return {find(plant::kTotalOutput), find(plant::kPvOutput), find(plant::kStorageOutput)};
}

double power_balance_mae(const TimeSeriesMatrix& pred, const TimeSeriesMatrix& truth, const PowerRoles& roles) {
  if (pred.values.rows() != truth.values.rows() || pred.values.cols() != truth.values.cols()) {
    throw InputError("power balance inputs differ in shape");
  }
  for (int r : {roles.total, roles.pv, roles.storage}) {
    if (r < 0 || r >= pred.values.rows()) throw InputError("power balance role index out of range");
  }
  if (pred.is_normalized || truth.is_normalized) throw InputError("power balance needs denormalized series");
  double sum = 0.0;
  const Eigen::Index L = pred.values.cols();
  for (Eigen::Index t = 0; t < L; ++t) {
    const auto residual = [&](const Matrix& v) {
      return v(roles.total, t) - (v(roles.pv, t) + v(roles.storage, t));
    };
    sum += std::abs(residual(truth.values) - residual(pred.values));
  }
  return sum / static_cast<double>(L);
}

void MetricAccumulator::add(const TimeSeriesMatrix& pred, const TimeSeriesMatrix& truth, const MaskMatrix* mask) {
  if (pred.values.rows() != truth.values.rows() || pred.values.cols() != truth.values.cols()) {
    throw InputError("prediction and truth differ in shape");
  }
  if (pred.variable_names != truth.variable_names) throw InputError("prediction and truth differ in variables");
  if (mask && (mask->rows() != pred.values.rows() || mask->cols() != pred.values.cols())) {
    throw InputError("mask shape differs from the series");
  }
  if (opts_.scope == Scope::Masked && !mask) throw InputError("masked scope needs a mask");
  const auto E = static_cast<std::size_t>(pred.values.rows());
  if (series_ == 0) {
    names_ = truth.variable_names;
    pred_cells_.assign(E, {});
    true_cells_.assign(E, {});
    pred_series_.assign(E, {});
    true_series_.assign(E, {});
    dtw_sum_.assign(E, 0.0);
    has_roles_ = true;
    try {
      power_roles(names_);
    } catch (const InputError&) {
      has_roles_ = false;
    }
  } else if (names_ != truth.variable_names) {
    throw InputError("accumulated series differ in variables");
  }
  for (std::size_t e = 0; e < E; ++e) {
    const auto ei = static_cast<Eigen::Index>(e);
    for (Eigen::Index t = 0; t < pred.values.cols(); ++t) {
      if (opts_.scope == Scope::Masked && !mask->at(ei, t)) continue;
      pred_cells_[e].push_back(pred.values(ei, t));
      true_cells_[e].push_back(truth.values(ei, t));
    }
    const auto p = row_span(pred.values, ei);
    const auto g = row_span(truth.values, ei);
    pred_series_[e].emplace_back(p.begin(), p.end());
    true_series_[e].emplace_back(g.begin(), g.end());
    dtw_sum_[e] += dtw(g, p);
  }
  if (E >= 2 && pred.values.cols() >= 2) {
    const CorrDiscrepancy d = corr_discrepancy(pred.values, truth.values);
    corr_sum_ += d.value;
    corr_skipped_ += d.skipped_pairs;
  }
  if (has_roles_) {
    const PowerRoles roles = power_roles(names_);
    pbal_sum_ += power_balance_mae(pred, truth, roles) * static_cast<double>(pred.values.cols());
    pbal_steps_ += static_cast<std::size_t>(pred.values.cols());
  }
  ++series_;
}

MetricReport MetricAccumulator::report() const {
  if (series_ == 0) throw InputError("no series were added to the metric accumulator");
  MetricReport r;
  r.scope = opts_.scope;
  r.series = series_;
  double abs_sum = 0.0, sq_sum = 0.0, dtw_total = 0.0, fid_total = 0.0;
  std::size_t fid_count = 0;
  for (std::size_t e = 0; e < names_.size(); ++e) {
    VariableMetrics v;
    v.name = names_[e];
    const auto& y = true_cells_[e];
    const auto& yh = pred_cells_[e];
    if (!y.empty()) {
      v.mae = mae(y, yh);
      v.rmse = rmse(y, yh);
      for (std::size_t i = 0; i < y.size(); ++i) {
        abs_sum += std::abs(y[i] - yh[i]);
        sq_sum += (y[i] - yh[i]) * (y[i] - yh[i]);
      }
      r.cells += y.size();
    }
    v.dtw = dtw_sum_[e] / static_cast<double>(series_);
    dtw_total += v.dtw;
    std::vector<std::span<const double>> real, gen;
    std::size_t windows = 0;
    for (std::size_t s = 0; s < series_; ++s) {
      real.emplace_back(true_series_[e][s]);
      gen.emplace_back(pred_series_[e][s]);
      windows += true_series_[e][s].size() / static_cast<std::size_t>(opts_.fid_window);
    }
    if (windows >= 2) {
      v.fid = fid(FidFeatureSet::from_windows(real, opts_.fid_window), FidFeatureSet::from_windows(gen, opts_.fid_window));
      fid_total += *v.fid;
      ++fid_count;
    }
    r.variables.push_back(v);
  }
  if (r.cells == 0) throw InputError("metric selection is empty");
  r.mae = abs_sum / static_cast<double>(r.cells);
  r.rmse = std::sqrt(sq_sum / static_cast<double>(r.cells));
  r.dtw = dtw_total / static_cast<double>(names_.size());
  if (fid_count == names_.size()) r.fid = fid_total / static_cast<double>(fid_count);
  r.corr_discrepancy = corr_sum_ / static_cast<double>(series_);
  r.corr_skipped_pairs = corr_skipped_;
  if (has_roles_ && pbal_steps_ > 0) r.power_balance_mae = pbal_sum_ / static_cast<double>(pbal_steps_);
  return r;
}

MetricReport evaluate(const TimeSeriesMatrix& pred, const TimeSeriesMatrix& truth, const MaskMatrix* mask,
                      const EvalOptions& opts) {
  MetricAccumulator acc(opts);
  acc.add(pred, truth, mask);
  return acc.report();
}

nlohmann::json to_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["scope"] = r.scope == Scope::Masked ? "masked" : "all";
  j["series"] = r.series;
  j["cells"] = r.cells;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  j["fid"] = opt(r.fid);
  j["dtw"] = r.dtw;
  j["corr_discrepancy"] = r.corr_discrepancy;
  j["corr_skipped_pairs"] = r.corr_skipped_pairs;
  j["power_balance_mae"] = opt(r.power_balance_mae);
  j["variables"] = nlohmann::json::array();
  for (const auto& v : r.variables) {
    j["variables"].push_back(
        {{"name", v.name}, {"mae", opt(v.mae)}, {"rmse", opt(v.rmse)}, {"fid", opt(v.fid)}, {"dtw", v.dtw}});
  }
  return j;
}

std::string csv_header() { return "label,scope,series,cells,mae,rmse,fid,dtw,corr_discrepancy,power_balance_mae"; }

std::string csv_row(const MetricReport& r, const std::string& label) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.10g}", *v) : std::string(); };
  return fmt::format("{},{},{},{},{:.10g},{:.10g},{},{:.10g},{:.10g},{}", label,
                     r.scope == Scope::Masked ? "masked" : "all", r.series, r.cells, r.mae, r.rmse, opt(r.fid), r.dtw,
                     r.corr_discrepancy, opt(r.power_balance_mae));
}

}  // namespace cmllm::metrics
