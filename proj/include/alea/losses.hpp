#ifndef ALEA_LOSSES_HPP
#define ALEA_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "alea/graph.hpp"
#include "alea/network.hpp"
#include "alea/rng.hpp"
#include "alea/tensor.hpp"

namespace alea {

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}
inline void require_labels(const Tensor& logits, const std::vector<int>& labels, const char* who) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument(std::string(who) + ": logits must be 2-d, got " + shape_str(logits.shape()));
  if (labels.size() != logits.rows())
    throw std::invalid_argument(std::string(who) + ": need one label per row");
  int C = static_cast<int>(logits.cols());
  for (int l : labels)
    if (l < 0 || l >= C)
      throw std::invalid_argument(std::string(who) + ": label " + std::to_string(l) +
                                  " out of range [0, " + std::to_string(C) + ")");
}
}  // namespace detail

// === heteroscedastic Gaussian: mean over elements of
//     1/2 * exp(-s) * (y - yhat)^2 + 1/2 * s

inline NodeId gaussian_hetero_nll_node(Graph& g, NodeId yhat, NodeId s, const Tensor& y) {
  detail::require_same_shape(g.out(yhat), y, "gaussian_hetero_nll");
  detail::require_same_shape(g.out(s), y, "gaussian_hetero_nll");
  NodeId r2 = g.square(g.sub(yhat, g.input(y)));
  NodeId attenuated = g.mul(r2, g.exp(g.neg(s)));
  return g.scale(g.mean(g.add(attenuated, s)), 0.5);
}

inline double gaussian_hetero_nll(const Tensor& y, const Tensor& yhat, const Tensor& s) {
  detail::require_same_shape(yhat, y, "gaussian_hetero_nll");
  detail::require_same_shape(s, y, "gaussian_hetero_nll");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double r = y[i] - yhat[i];
    acc += 0.5 * (std::exp(-s[i]) * r * r + s[i]);
  }
  return acc / static_cast<double>(y.size());
}

// === heteroscedastic Laplace: mean over elements of
//     exp(-s) * |y - yhat| + s     (constant log 2 dropped)

inline NodeId laplace_hetero_nll_node(Graph& g, NodeId yhat, NodeId s, const Tensor& y) {
  detail::require_same_shape(g.out(yhat), y, "laplace_hetero_nll");
  detail::require_same_shape(g.out(s), y, "laplace_hetero_nll");
  NodeId r = g.abs(g.sub(yhat, g.input(y)));
  return g.mean(g.add(g.mul(r, g.exp(g.neg(s))), s));
}

inline double laplace_hetero_nll(const Tensor& y, const Tensor& yhat, const Tensor& s) {
  detail::require_same_shape(yhat, y, "laplace_hetero_nll");
  detail::require_same_shape(s, y, "laplace_hetero_nll");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    acc += std::exp(-s[i]) * std::abs(y[i] - yhat[i]) + s[i];
  return acc / static_cast<double>(y.size());
}

// === fixed-noise Gaussian: mean over elements of
//     1/(2 sigma^2) * (y - yhat)^2 + 1/2 * log sigma^2

inline NodeId fixed_sigma_nll_node(Graph& g, NodeId yhat, const Tensor& y, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("fixed_sigma_nll: sigma must be positive");
  detail::require_same_shape(g.out(yhat), y, "fixed_sigma_nll");
  NodeId mse = g.mean(g.square(g.sub(yhat, g.input(y))));
  NodeId scaled = g.scale(mse, 1.0 / (2.0 * sigma * sigma));
  return g.add(scaled, g.input(Tensor::scalar(std::log(sigma * sigma) / 2.0)));
}

inline double fixed_sigma_nll(const Tensor& y, const Tensor& yhat, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("fixed_sigma_nll: sigma must be positive");
  detail::require_same_shape(yhat, y, "fixed_sigma_nll");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double r = y[i] - yhat[i];
    acc += r * r;
  }
  return acc / (2.0 * sigma * sigma * static_cast<double>(y.size())) + std::log(sigma * sigma) / 2.0;
}

// === softmax cross-entropy, mean over rows of
//     logsumexp(logits_i) - logits_i[label_i]

inline NodeId softmax_xent_node(Graph& g, NodeId logits, const std::vector<int>& labels) {
  detail::require_labels(g.out(logits), labels, "softmax_xent");
  NodeId lse = g.logsumexp_last(logits);
  NodeId picked = g.gather_labels(logits, labels);
  return g.mean(g.sub(lse, picked));
}

inline double softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
  detail::require_labels(logits, labels, "softmax_xent");
  std::size_t n = logits.rows(), C = logits.cols();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits.at(i, 0);
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, logits.at(i, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(logits.at(i, c) - m);
    acc += m + std::log(sum) - logits.at(i, static_cast<std::size_t>(labels[i]));
  }
  return acc / static_cast<double>(n);
}

// === stochastic softmax cross-entropy over noisy logits
//
// xhat_{i,t} = f_i + sigma_i * eps_t with sigma_i = exp(s_logits_i) and
// eps ~ N(0, I); per point the loss is
//   -[ logsumexp_t( xhat_{i,t,c_i} - logsumexp_{c'} xhat_{i,t,c'} ) - log T ]
// i.e. minus the log of the MC-averaged softmax probability of the true
// class; averaged over points. Noise draw t uses the stream
// derive(noise_seed, {0x33, t}), row-major over (i, c), so the taped and
// tape-free paths see identical draws.

namespace detail {
inline Tensor noise_draw(std::uint64_t noise_seed, std::uint64_t t, std::size_t n, std::size_t C) {
  RngStream rng = RngStream::derive(noise_seed, {0x33, t});
  Tensor eps = Tensor::zeros({n, C});
  for (double& v : eps.values()) v = rng.normal();
  return eps;
}
}  // namespace detail

inline NodeId stochastic_softmax_xent_node(Graph& g, NodeId f, NodeId s_logits,
                                           const std::vector<int>& labels, std::size_t T,
                                           std::uint64_t noise_seed) {
  const Tensor& fv = g.out(f);
  detail::require_labels(fv, labels, "stochastic_softmax_xent");
  detail::require_same_shape(g.out(s_logits), fv, "stochastic_softmax_xent");
  if (T < 1) throw std::invalid_argument("stochastic_softmax_xent: T must be >= 1");
  std::size_t n = fv.rows(), C = fv.cols();
  NodeId sigma = g.exp(s_logits);
  std::vector<NodeId> per_t;
  per_t.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    NodeId eps = g.input(detail::noise_draw(noise_seed, t, n, C));
    NodeId xhat = g.add(f, g.mul(sigma, eps));
    NodeId ll = g.sub(g.gather_labels(xhat, labels), g.logsumexp_last(xhat));  // (n)
    per_t.push_back(ll);
  }
  NodeId stacked = T == 1 ? per_t[0] : g.stack_last(per_t);  // (n, T)
  NodeId lse_t = T == 1 ? stacked : g.logsumexp_last(stacked);
  NodeId z = g.add(lse_t, g.input(Tensor::scalar(-std::log(static_cast<double>(T)))));
  return g.scale(g.mean(z), -1.0);
}

/// Tape-free evaluation of the same estimator with a streaming
/// logsumexp over t, usable at very large T.
inline double stochastic_softmax_xent(const Tensor& f, const Tensor& s_logits,
                                      const std::vector<int>& labels, std::size_t T,
                                      std::uint64_t noise_seed) {
  detail::require_labels(f, labels, "stochastic_softmax_xent");
  detail::require_same_shape(s_logits, f, "stochastic_softmax_xent");
  if (T < 1) throw std::invalid_argument("stochastic_softmax_xent: T must be >= 1");
  std::size_t n = f.rows(), C = f.cols();
  std::vector<double> run_max(n, -std::numeric_limits<double>::infinity());
  std::vector<double> run_sum(n, 0.0);
  std::vector<double> row(C);
  for (std::size_t t = 0; t < T; ++t) {
    RngStream rng = RngStream::derive(noise_seed, {0x33, t});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < C; ++c)
        row[c] = f.at(i, c) + std::exp(s_logits.at(i, c)) * rng.normal();
      double m = row[0];
      for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
      double sum = 0.0;
      for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - m);
      double ll = row[static_cast<std::size_t>(labels[i])] - (m + std::log(sum));
      if (ll <= run_max[i]) {
        run_sum[i] += std::exp(ll - run_max[i]);
      } else {
        run_sum[i] = run_sum[i] * std::exp(run_max[i] - ll) + 1.0;
        run_max[i] = ll;
      }
    }
  }
  double acc = 0.0;
  double logT = std::log(static_cast<double>(T));
  for (std::size_t i = 0; i < n; ++i)
    acc += (run_max[i] + std::log(run_sum[i])) - logT;
  return -acc / static_cast<double>(n);
}

// === composed objective: mean NLL + (1-p)/(2N) * ||W||^2

inline double dropout_vi_objective(double mean_nll, const Parameters& params, double dropout_p,
                                   std::size_t N) {
  return mean_nll + weight_decay_term(params, dropout_p, N);
}

inline NodeId dropout_vi_objective_node(Graph& g, NodeId mean_nll, const ParamNodes& ids,
                                        double dropout_p, std::size_t N) {
  return g.add(mean_nll, weight_decay_node(g, ids, dropout_p, N));
}

}  // namespace alea

#endif  // ALEA_LOSSES_HPP
