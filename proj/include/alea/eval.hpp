#ifndef ALEA_EVAL_HPP
#define ALEA_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "alea/io_util.hpp"
#include "alea/tensor.hpp"

namespace alea {

struct CalibrationCurve {
  std::vector<double> grid;      // nominal probability / confidence level
  std::vector<double> observed;  // empirical frequency
  std::vector<std::size_t> counts;
};

struct PRCurve {
  std::vector<double> recall;   // nominal fraction of points retained
  std::vector<double> value;    // accuracy or error over the retained set
  std::vector<std::size_t> n_retained;
  std::vector<double> skipped;  // levels dropped because nothing was retained
};

enum class Likelihood { gaussian, laplace };

/// Inverse standard normal CDF, Acklam's rational approximation
/// (|relative error| < 1.2e-9 over (0,1)).
inline double inv_norm_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("inv_norm_cdf: p must be in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425, p_high = 1.0 - p_low;
  double q, r;
  if (p < p_low) {
    q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p <= p_high) {
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  q = std::sqrt(-2.0 * std::log(1.0 - p));
  return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
         ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

/// Every (point, class) probability lands in an equal-width bin over
/// [0,1]; the observed frequency of a bin is the fraction of its entries
/// whose class is the true label. Empty bins are omitted; the grid holds
/// bin centers.
inline CalibrationCurve classification_calibration(const Tensor& probs,
                                                   const std::vector<int>& labels,
                                                   std::size_t n_bins) {
  if (n_bins < 2) throw std::invalid_argument("classification_calibration: need n_bins >= 2");
  if (probs.shape().size() != 2 || labels.size() != probs.rows())
    throw std::invalid_argument("classification_calibration: need one label per probability row");
  std::size_t n = probs.rows(), C = probs.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      double p = probs.at(i, c);
      if (p < -1e-12 || p > 1.0 + 1e-12)
        throw std::invalid_argument("classification_calibration: probability out of [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("classification_calibration: row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum));
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= C)
      throw std::invalid_argument("classification_calibration: label out of range");
  }
  std::vector<std::size_t> total(n_bins, 0), hit(n_bins, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      double p = std::clamp(probs.at(i, c), 0.0, 1.0);
      std::size_t b = std::min(n_bins - 1, static_cast<std::size_t>(p * static_cast<double>(n_bins)));
      ++total[b];
      if (static_cast<std::size_t>(labels[i]) == c) ++hit[b];
    }
  CalibrationCurve curve;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (total[b] == 0) continue;
    curve.grid.push_back((static_cast<double>(b) + 0.5) / static_cast<double>(n_bins));
    curve.observed.push_back(static_cast<double>(hit[b]) / static_cast<double>(total[b]));
    curve.counts.push_back(total[b]);
  }
  return curve;
}

/// Half-width of the central q-probability interval of the predicted
/// distribution with the given variance.
inline double central_interval_halfwidth(Likelihood family, double variance, double q) {
  if (!(variance > 0.0))
    throw std::invalid_argument("regression_calibration: variance must be positive");
  if (!(q > 0.0 && q < 1.0))
    throw std::invalid_argument("regression_calibration: level must be in (0,1)");
  if (family == Likelihood::gaussian)
    return inv_norm_cdf(0.5 * (1.0 + q)) * std::sqrt(variance);
  double b = std::sqrt(variance / 2.0);
  return -b * std::log(1.0 - q);
}

/// For each nominal level q, the fraction of points whose target falls
/// inside the central q-interval of its predicted distribution.
inline CalibrationCurve regression_calibration(const std::vector<double>& pred_mean,
                                               const std::vector<double>& total_var,
                                               const std::vector<double>& y_true,
                                               Likelihood family, const std::vector<double>& grid) {
  std::size_t n = pred_mean.size();
  if (total_var.size() != n || y_true.size() != n)
    throw std::invalid_argument("regression_calibration: length mismatch");
  if (n == 0) throw std::invalid_argument("regression_calibration: empty input");
  if (grid.empty()) throw std::invalid_argument("regression_calibration: empty grid");
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    if (!(grid[k] < grid[k + 1]))
      throw std::invalid_argument("regression_calibration: grid must be strictly increasing");
  CalibrationCurve curve;
  for (double q : grid) {
    std::size_t inside = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double hw = central_interval_halfwidth(family, total_var[i], q);
      if (std::abs(y_true[i] - pred_mean[i]) <= hw) ++inside;
    }
    curve.grid.push_back(q);
    curve.observed.push_back(static_cast<double>(inside) / static_cast<double>(n));
    curve.counts.push_back(n);
  }
  return curve;
}

/// Count-weighted mean of (observed - nominal)^2 over occupied bins.
inline double calibration_mse(const CalibrationCurve& curve) {
  if (curve.grid.empty()) throw std::invalid_argument("calibration_mse: empty curve");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < curve.grid.size(); ++i) {
    double w = static_cast<double>(curve.counts[i]);
    double e = curve.observed[i] - curve.grid[i];
    num += w * e * e;
    den += w;
  }
  return num / den;
}

enum class PRValue {
  accuracy,      // mean of correctness indicators over retained points
  rmse,          // sqrt(mean(error^2)) over retained points
  inverse_rmse   // 1 / rmse
};

/// For each percentile p: retain points whose uncertainty is <= the
/// nearest-rank p-quantile (ties retained) and report the metric over
/// the retained set. Retained sets are nested across increasing p.
inline PRCurve precision_recall_uncertainty(const std::vector<double>& uncertainty,
                                            const std::vector<double>& correctness_or_error,
                                            const std::vector<double>& percentiles,
                                            PRValue kind) {
  std::size_t n = uncertainty.size();
  if (correctness_or_error.size() != n)
    throw std::invalid_argument("precision_recall_uncertainty: length mismatch");
  for (double p : percentiles)
    if (!(p > 0.0 && p <= 1.0))
      throw std::invalid_argument("precision_recall_uncertainty: percentile out of (0,1]");
  std::vector<double> sorted = uncertainty;
  std::sort(sorted.begin(), sorted.end());
  PRCurve curve;
  for (double p : percentiles) {
    std::size_t rank = n == 0 ? 0 : static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    if (rank == 0) {
      curve.skipped.push_back(p);
      continue;
    }
    double threshold = sorted[rank - 1];
    double acc = 0.0;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (uncertainty[i] > threshold) continue;
      ++kept;
      double v = correctness_or_error[i];
      acc += kind == PRValue::accuracy ? v : v * v;
    }
    if (kept == 0) {
      curve.skipped.push_back(p);
      continue;
    }
    double value = kind == PRValue::accuracy ? acc / static_cast<double>(kept)
                                             : std::sqrt(acc / static_cast<double>(kept));
    if (kind == PRValue::inverse_rmse) {
      if (value == 0.0) {
        curve.skipped.push_back(p);
        continue;
      }
      value = 1.0 / value;
    }
    curve.recall.push_back(p);
    curve.value.push_back(value);
    curve.n_retained.push_back(kept);
  }
  return curve;
}

struct RegressionMetrics {
  double rel = 0.0, rms = 0.0, log10 = 0.0;
  double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
};

/// rel/log10/delta follow the usual depth-estimation conventions and
/// need strictly positive values; rms is unrestricted.
inline RegressionMetrics regression_metrics(const std::vector<double>& pred,
                                            const std::vector<double>& truth) {
  std::size_t n = pred.size();
  if (truth.size() != n || n == 0)
    throw std::invalid_argument("regression_metrics: need equal nonempty inputs");
  RegressionMetrics m;
  for (std::size_t i = 0; i < n; ++i) {
    double e = pred[i] - truth[i];
    m.rms += e * e;
  }
  m.rms = std::sqrt(m.rms / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    if (!(truth[i] > 0.0) || !(pred[i] > 0.0))
      throw std::invalid_argument("regression_metrics: ratio metrics need positive values");
  std::size_t d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m.rel += std::abs(pred[i] - truth[i]) / truth[i];
    m.log10 += std::abs(std::log10(pred[i]) - std::log10(truth[i]));
    double ratio = std::max(pred[i] / truth[i], truth[i] / pred[i]);
    if (ratio < 1.25) ++d1;
    if (ratio < 1.25 * 1.25) ++d2;
    if (ratio < 1.25 * 1.25 * 1.25) ++d3;
  }
  m.rel /= static_cast<double>(n);
  m.log10 /= static_cast<double>(n);
  m.delta1 = static_cast<double>(d1) / static_cast<double>(n);
  m.delta2 = static_cast<double>(d2) / static_cast<double>(n);
  m.delta3 = static_cast<double>(d3) / static_cast<double>(n);
  return m;
}

struct ClassificationMetrics {
  double accuracy = 0.0;
  double mean_iou = 0.0;
};

/// Accuracy plus IoU = TP/(TP+FP+FN) per class, averaged over classes
/// present in the labels or the predictions.
inline ClassificationMetrics classification_metrics(const std::vector<int>& pred_class,
                                                    const std::vector<int>& labels, std::size_t C) {
  std::size_t n = pred_class.size();
  if (labels.size() != n || n == 0)
    throw std::invalid_argument("classification_metrics: need equal nonempty inputs");
  for (std::size_t i = 0; i < n; ++i)
    if (pred_class[i] < 0 || static_cast<std::size_t>(pred_class[i]) >= C || labels[i] < 0 ||
        static_cast<std::size_t>(labels[i]) >= C)
      throw std::invalid_argument("classification_metrics: class out of range");
  std::vector<std::size_t> tp(C, 0), fp(C, 0), fn(C, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto p = static_cast<std::size_t>(pred_class[i]);
    auto t = static_cast<std::size_t>(labels[i]);
    if (p == t) {
      ++tp[p];
      ++correct;
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  ClassificationMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  double iou_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;  // class absent from labels and predictions
    ++present;
    iou_sum += static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  m.mean_iou = present == 0 ? 0.0 : iou_sum / static_cast<double>(present);
  return m;
}

// --- curve files ---------------------------------------------------------

inline std::string calibration_to_csv(const CalibrationCurve& c, const std::string& trailer = "") {
  std::ostringstream out;
  out << "nominal,observed,count\n";
  for (std::size_t i = 0; i < c.grid.size(); ++i)
    out << fmt_full(c.grid[i]) << ',' << fmt_full(c.observed[i]) << ',' << c.counts[i] << '\n';
  if (!trailer.empty()) out << trailer << '\n';
  return out.str();
}

inline std::string pr_to_csv(const PRCurve& c, const std::string& trailer = "") {
  std::ostringstream out;
  out << "recall,value,n_retained\n";
  for (std::size_t i = 0; i < c.recall.size(); ++i)
    out << fmt_full(c.recall[i]) << ',' << fmt_full(c.value[i]) << ',' << c.n_retained[i] << '\n';
  for (double p : c.skipped) out << "# skipped empty level " << fmt_full(p) << '\n';
  if (!trailer.empty()) out << trailer << '\n';
  return out.str();
}

inline CalibrationCurve calibration_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line) != std::vector<std::string>{"nominal", "observed", "count"})
    throw std::invalid_argument("calibration csv: bad header");
  CalibrationCurve c;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 3) throw std::invalid_argument("calibration csv: bad row '" + line + "'");
    c.grid.push_back(parse_double(cells[0]));
    c.observed.push_back(parse_double(cells[1]));
    c.counts.push_back(static_cast<std::size_t>(parse_long(cells[2])));
  }
  return c;
}

inline PRCurve pr_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line) != std::vector<std::string>{"recall", "value", "n_retained"})
    throw std::invalid_argument("pr csv: bad header");
  PRCurve c;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 3) throw std::invalid_argument("pr csv: bad row '" + line + "'");
    c.recall.push_back(parse_double(cells[0]));
    c.value.push_back(parse_double(cells[1]));
    c.n_retained.push_back(static_cast<std::size_t>(parse_long(cells[2])));
  }
  return c;
}

}  // namespace alea

#endif  // ALEA_EVAL_HPP
