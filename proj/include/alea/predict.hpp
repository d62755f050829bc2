#ifndef ALEA_PREDICT_HPP
#define ALEA_PREDICT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "alea/io_util.hpp"
#include "alea/network.hpp"
#include "alea/rng.hpp"
#include "alea/tensor.hpp"

namespace alea {

enum class Task { regression, classification };

/// T stochastic forward passes. For regression heads `scale` holds the
/// per-sample predicted variance exp(s); for classification heads it
/// holds the raw s_logits (log sigma). Plain heads leave it empty.
struct PredictiveSamples {
  Task task = Task::regression;
  std::vector<Tensor> pred;   // yhat_t or logits f_t, each n x D
  std::vector<Tensor> scale;  // sigma^2_t (regression) or s_logits_t (classification)
  std::size_t T = 0;
  std::uint64_t seed = 0;
};

struct UncertaintyDecomposition {
  Tensor mean;           // n x D
  Tensor epistemic_var;  // n x D
  Tensor aleatoric_var;  // n x D
  Tensor total_var;      // n x D
};

inline PredictiveSamples mc_dropout_predict(const Parameters& params, const NetworkSpec& spec,
                                            const Tensor& x, std::size_t T, std::uint64_t seed) {
  if (T < 1) throw std::invalid_argument("mc_dropout_predict: T must be >= 1");
  PredictiveSamples out;
  out.task = head_is_regression(spec.head) ? Task::regression : Task::classification;
  out.T = T;
  out.seed = seed;
  for (std::size_t t = 0; t < T; ++t) {
    DropoutMask mask = sample_mask(spec, seed, t);
    HeadOutput h = forward_eval(params, spec, x, &mask);
    out.pred.push_back(std::move(h.pred));
    if (h.s) {
      if (out.task == Task::regression) {
        Tensor var = *h.s;
        for (double& v : var.values()) v = std::exp(v);
        out.scale.push_back(std::move(var));
      } else {
        out.scale.push_back(std::move(*h.s));
      }
    }
  }
  return out;
}

/// Deterministic MAP pass wrapped in the same container (T = 1, no mask).
inline PredictiveSamples map_predict(const Parameters& params, const NetworkSpec& spec,
                                     const Tensor& x) {
  PredictiveSamples out;
  out.task = head_is_regression(spec.head) ? Task::regression : Task::classification;
  out.T = 1;
  HeadOutput h = forward_eval(params, spec, x, nullptr);
  out.pred.push_back(std::move(h.pred));
  if (h.s) {
    if (out.task == Task::regression) {
      Tensor var = *h.s;
      for (double& v : var.values()) v = std::exp(v);
      out.scale.push_back(std::move(var));
    } else {
      out.scale.push_back(std::move(*h.s));
    }
  }
  return out;
}

/// Mean, population variance of the sampled means (epistemic), mean
/// predicted variance (aleatoric), and their sum. The mean is computed
/// about the first sample so that identical samples (collapsed
/// posterior, e.g. dropout_p = 0) give an epistemic variance of exactly
/// zero; total is defined as the same-order sum of the two parts, so
/// total == epistemic + aleatoric holds bitwise. Models without a
/// predicted variance contribute zero aleatoric variance.
inline UncertaintyDecomposition decompose_regression(const PredictiveSamples& s) {
  if (s.task != Task::regression)
    throw std::invalid_argument("decompose_regression: need regression samples");
  if (s.pred.empty()) throw std::invalid_argument("decompose_regression: empty samples");
  const Shape& shape = s.pred[0].shape();
  double T = static_cast<double>(s.pred.size());
  UncertaintyDecomposition d;
  d.mean = Tensor::zeros(shape);
  d.epistemic_var = Tensor::zeros(shape);
  d.aleatoric_var = Tensor::zeros(shape);
  d.total_var = Tensor::zeros(shape);
  const Tensor& anchor = s.pred[0];
  for (const Tensor& p : s.pred)
    for (std::size_t i = 0; i < p.size(); ++i) d.mean[i] += p[i] - anchor[i];
  for (std::size_t i = 0; i < d.mean.size(); ++i) d.mean[i] = anchor[i] + d.mean[i] / T;
  for (const Tensor& p : s.pred)
    for (std::size_t i = 0; i < p.size(); ++i) {
      double r = p[i] - d.mean[i];
      d.epistemic_var[i] += r * r;
    }
  for (double& v : d.epistemic_var.values()) v /= T;
  if (!s.scale.empty()) {
    if (s.scale.size() != s.pred.size())
      throw std::invalid_argument("decompose_regression: sample count mismatch");
    for (const Tensor& v : s.scale)
      for (std::size_t i = 0; i < v.size(); ++i) d.aleatoric_var[i] += v[i];
    for (double& v : d.aleatoric_var.values()) v /= T;
  }
  for (std::size_t i = 0; i < d.total_var.size(); ++i)
    d.total_var[i] = d.epistemic_var[i] + d.aleatoric_var[i];
  return d;
}

inline void softmax_row(const double* in, double* out, std::size_t C) {
  double m = in[0];
  for (std::size_t c = 1; c < C; ++c) m = std::max(m, in[c]);
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    out[c] = std::exp(in[c] - m);
    sum += out[c];
  }
  for (std::size_t c = 0; c < C; ++c) out[c] /= sum;
}

/// (1/T) * sum_t Softmax(f_t), rows are probability vectors.
inline Tensor mean_softmax(const PredictiveSamples& s) {
  if (s.task != Task::classification)
    throw std::invalid_argument("mean_softmax: need classification samples");
  if (s.pred.empty()) throw std::invalid_argument("mean_softmax: empty samples");
  std::size_t n = s.pred[0].rows(), C = s.pred[0].cols();
  double T = static_cast<double>(s.pred.size());
  Tensor probs = Tensor::zeros({n, C});
  std::vector<double> row(C);
  for (const Tensor& f : s.pred)
    for (std::size_t i = 0; i < n; ++i) {
      softmax_row(f.values().data() + i * C, row.data(), C);
      for (std::size_t c = 0; c < C; ++c) probs.at(i, c) += row[c];
    }
  for (double& v : probs.values()) v /= T;
  return probs;
}

/// H(p) = -sum_c p_c log p_c, zero-probability terms contribute 0.
inline double predictive_entropy(const std::vector<double>& p) {
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0) throw std::invalid_argument("predictive_entropy: negative probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("predictive_entropy: probabilities sum to " + std::to_string(sum));
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline Tensor predictive_entropy_rows(const Tensor& probs) {
  std::size_t n = probs.rows(), C = probs.cols();
  Tensor h = Tensor::zeros({n});
  std::vector<double> row(C);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < C; ++c) row[c] = probs.at(i, c);
    h[i] = predictive_entropy(row);
  }
  return h;
}

/// Per-point population variance of the logits across dropout samples,
/// averaged over classes.
inline Tensor epistemic_logit_variance_per_point(const PredictiveSamples& s) {
  if (s.task != Task::classification)
    throw std::invalid_argument("epistemic_logit_variance: need classification samples");
  if (s.pred.size() < 2) throw std::invalid_argument("epistemic_logit_variance: need T >= 2");
  std::size_t n = s.pred[0].rows(), C = s.pred[0].cols();
  double T = static_cast<double>(s.pred.size());
  // centered on the first sample: identical samples give exactly zero
  const Tensor& anchor = s.pred[0];
  Tensor mean = Tensor::zeros({n, C});
  for (const Tensor& f : s.pred)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += f[i] - anchor[i];
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = anchor[i] + mean[i] / T;
  Tensor var = Tensor::zeros({n, C});
  for (const Tensor& f : s.pred)
    for (std::size_t i = 0; i < var.size(); ++i) {
      double r = f[i] - mean[i];
      var[i] += r * r;
    }
  Tensor out = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) acc += var.at(i, c) / T;
    out[i] = acc / static_cast<double>(C);
  }
  return out;
}

/// Dataset-level scalar: the per-point value averaged over points.
inline double epistemic_logit_variance(const PredictiveSamples& s) {
  Tensor per_point = epistemic_logit_variance_per_point(s);
  double acc = 0.0;
  for (double v : per_point.values()) acc += v;
  return acc / static_cast<double>(per_point.size());
}

/// Probabilities marginalized over logit noise at MAP weights:
/// (1/T) * sum_t Softmax(f + sigma * eps_t), sigma = exp(s_logits).
inline Tensor noise_marginal_probs(const Parameters& params, const NetworkSpec& spec,
                                   const Tensor& x, std::size_t T_noise, std::uint64_t seed) {
  if (spec.head != Head::classification_hetero)
    throw std::invalid_argument("noise_marginal_probs: need a heteroscedastic classification head");
  if (T_noise < 1) throw std::invalid_argument("noise_marginal_probs: T_noise must be >= 1");
  HeadOutput h = forward_eval(params, spec, x, nullptr);
  const Tensor& f = h.pred;
  const Tensor& s = *h.s;
  std::size_t n = f.rows(), C = f.cols();
  Tensor probs = Tensor::zeros({n, C});
  std::vector<double> noisy(C), row(C);
  for (std::size_t t = 0; t < T_noise; ++t) {
    RngStream rng = RngStream::derive(seed, {0x44, t});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < C; ++c)
        noisy[c] = f.at(i, c) + std::exp(s.at(i, c)) * rng.normal();
      softmax_row(noisy.data(), row.data(), C);
      for (std::size_t c = 0; c < C; ++c) probs.at(i, c) += row[c];
    }
  }
  for (double& v : probs.values()) v /= static_cast<double>(T_noise);
  return probs;
}

/// Mean over points of the entropy of the noise-marginalized MAP
/// probability vector.
inline double aleatoric_classification_entropy(const Parameters& params, const NetworkSpec& spec,
                                               const Tensor& x, std::size_t T_noise,
                                               std::uint64_t seed) {
  Tensor probs = noise_marginal_probs(params, spec, x, T_noise, seed);
  Tensor h = predictive_entropy_rows(probs);
  double acc = 0.0;
  for (double v : h.values()) acc += v;
  return acc / static_cast<double>(h.size());
}

// --- prediction dump files ---------------------------------------------

struct RegressionDump {
  std::vector<double> y_true, pred_mean, epistemic_var, aleatoric_var, total_var;
};

struct ClassificationDump {
  std::vector<int> label, pred_class;
  std::vector<double> max_prob, entropy, logit_var;
  std::vector<std::vector<double>> probs;  // per-class columns
};

inline std::string regression_dump_to_csv(const RegressionDump& d, const std::string& trailer = "") {
  std::ostringstream out;
  out << "index,y_true,pred_mean,epistemic_var,aleatoric_var,total_var\n";
  for (std::size_t i = 0; i < d.y_true.size(); ++i)
    out << i << ',' << fmt_full(d.y_true[i]) << ',' << fmt_full(d.pred_mean[i]) << ','
        << fmt_full(d.epistemic_var[i]) << ',' << fmt_full(d.aleatoric_var[i]) << ','
        << fmt_full(d.total_var[i]) << '\n';
  if (!trailer.empty()) out << trailer << '\n';
  return out.str();
}

inline std::string classification_dump_to_csv(const ClassificationDump& d,
                                              const std::string& trailer = "") {
  std::size_t C = d.probs.size();
  std::ostringstream out;
  out << "index,label,pred_class,max_prob,entropy,logit_var";
  for (std::size_t c = 0; c < C; ++c) out << ",p" << c;
  out << '\n';
  for (std::size_t i = 0; i < d.label.size(); ++i) {
    out << i << ',' << d.label[i] << ',' << d.pred_class[i] << ',' << fmt_full(d.max_prob[i])
        << ',' << fmt_full(d.entropy[i]) << ',' << fmt_full(d.logit_var[i]);
    for (std::size_t c = 0; c < C; ++c) out << ',' << fmt_full(d.probs[c][i]);
    out << '\n';
  }
  if (!trailer.empty()) out << trailer << '\n';
  return out.str();
}

inline bool is_comment_line(const std::string& line) {
  return !line.empty() && line[0] == '#';
}

inline RegressionDump regression_dump_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line) != std::vector<std::string>{"index", "y_true", "pred_mean",
                                                       "epistemic_var", "aleatoric_var", "total_var"})
    throw std::invalid_argument("prediction dump: bad regression header");
  RegressionDump d;
  while (std::getline(in, line)) {
    if (line.empty() || is_comment_line(line)) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 6) throw std::invalid_argument("prediction dump: bad row '" + line + "'");
    d.y_true.push_back(parse_double(cells[1]));
    d.pred_mean.push_back(parse_double(cells[2]));
    d.epistemic_var.push_back(parse_double(cells[3]));
    d.aleatoric_var.push_back(parse_double(cells[4]));
    d.total_var.push_back(parse_double(cells[5]));
  }
  return d;
}

inline ClassificationDump classification_dump_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("prediction dump: empty file");
  auto header = split_csv_line(line);
  const std::vector<std::string> fixed = {"index", "label", "pred_class", "max_prob", "entropy", "logit_var"};
  if (header.size() < fixed.size() + 2 ||
      !std::equal(fixed.begin(), fixed.end(), header.begin()))
    throw std::invalid_argument("prediction dump: bad classification header");
  std::size_t C = header.size() - fixed.size();
  for (std::size_t c = 0; c < C; ++c)
    if (header[fixed.size() + c] != "p" + std::to_string(c))
      throw std::invalid_argument("prediction dump: bad probability column header");
  ClassificationDump d;
  d.probs.resize(C);
  while (std::getline(in, line)) {
    if (line.empty() || is_comment_line(line)) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::invalid_argument("prediction dump: bad row '" + line + "'");
    d.label.push_back(static_cast<int>(parse_long(cells[1])));
    d.pred_class.push_back(static_cast<int>(parse_long(cells[2])));
    d.max_prob.push_back(parse_double(cells[3]));
    d.entropy.push_back(parse_double(cells[4]));
    d.logit_var.push_back(parse_double(cells[5]));
    for (std::size_t c = 0; c < C; ++c) d.probs[c].push_back(parse_double(cells[6 + c]));
  }
  return d;
}

}  // namespace alea

#endif  // ALEA_PREDICT_HPP
