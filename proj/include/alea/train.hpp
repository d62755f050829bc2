#ifndef ALEA_TRAIN_HPP
#define ALEA_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "alea/graph.hpp"
#include "alea/losses.hpp"
#include "alea/network.hpp"
#include "alea/optimizer.hpp"
#include "alea/rng.hpp"
#include "alea/synthdata.hpp"
#include "alea/tensor.hpp"

namespace alea {

enum class LossKind {
  fixed_gaussian,     // plain regression head, sigma fixed
  hetero_gaussian,    // split regression head
  hetero_laplace,     // split regression head, L1 residuals
  softmax,            // plain classification head
  stochastic_softmax  // split classification head with logit noise
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t max_steps = 0;  // when nonzero, stop after this many steps
  std::size_t batch_size = 32;
  RmsPropConfig opt;
  double fixed_sigma = 1.0;   // for LossKind::fixed_gaussian
  std::size_t noise_T = 10;   // MC draws per step for the stochastic loss
  std::uint64_t seed = 1;
  LossKind loss = LossKind::fixed_gaussian;
};

struct TrainResult {
  std::size_t steps = 0;
  double final_objective = 0.0;
  std::vector<double> epoch_objective;  // mean over the epoch's batches
};

namespace detail {

inline Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& order,
                          std::size_t begin, std::size_t end) {
  std::size_t k = end - begin, d = t.cols();
  Tensor out = Tensor::zeros({k, d});
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = t.at(order[begin + r], j);
  return out;
}

inline void require_loss_head(LossKind loss, const NetworkSpec& spec) {
  bool ok = false;
  switch (loss) {
    case LossKind::fixed_gaussian: ok = spec.head == Head::regression_plain; break;
    case LossKind::hetero_gaussian:
    case LossKind::hetero_laplace: ok = spec.head == Head::regression_hetero; break;
    case LossKind::softmax: ok = spec.head == Head::classification_plain; break;
    case LossKind::stochastic_softmax: ok = spec.head == Head::classification_hetero; break;
  }
  if (!ok) throw std::invalid_argument("train: loss kind does not match network head");
}

}  // namespace detail

/// Minibatch training with per-step dropout masks and the composed
/// objective mean NLL + weight_decay * (1-p)/(2N) * ||W||^2, N being the
/// training set size. Pure function of (spec, data, config, params).
inline TrainResult train_network(Parameters& params, const NetworkSpec& spec, const Dataset& data,
                                 const TrainConfig& cfg) {
  spec.validate();
  detail::require_loss_head(cfg.loss, spec);
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.epochs < 1 && cfg.max_steps == 0)
    throw std::invalid_argument("train: need epochs >= 1 or max_steps > 0");
  std::size_t N = data.n();
  if (N == 0) throw std::invalid_argument("train: empty dataset");
  bool classification = data.task == Task::classification;
  if (classification != !head_is_regression(spec.head))
    throw std::invalid_argument("train: dataset task does not match network head");

  OptimizerState opt = OptimizerState::init(params, cfg.opt);
  TrainResult result;
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t epoch_cap = cfg.max_steps > 0 ? std::numeric_limits<std::size_t>::max() : cfg.epochs;
  for (std::size_t epoch = 0; epoch < epoch_cap; ++epoch) {
    RngStream shuffle = RngStream::derive(cfg.seed, {0x61, epoch});
    for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t begin = 0; begin < N; begin += cfg.batch_size) {
      std::size_t end = std::min(begin + cfg.batch_size, N);
      Tensor xb = detail::gather_rows(data.inputs, order, begin, end);

      Graph g;
      ParamNodes ids = add_parameters(g, params);
      DropoutMask mask = sample_mask(spec, cfg.seed, result.steps);
      NodeId x = g.input(xb);
      HeadNodes head = forward_graph(g, ids, spec, x, &mask);

      NodeId nll;
      if (classification) {
        std::vector<int> yb(end - begin);
        for (std::size_t r = 0; r < yb.size(); ++r) yb[r] = data.labels[order[begin + r]];
        if (cfg.loss == LossKind::softmax) {
          nll = softmax_xent_node(g, head.pred, yb);
        } else {
          std::uint64_t noise_seed = RngStream::derive(cfg.seed, {0x62, result.steps}).next_u64();
          nll = stochastic_softmax_xent_node(g, head.pred, head.s, yb, cfg.noise_T, noise_seed);
        }
      } else {
        Tensor yb = detail::gather_rows(data.targets, order, begin, end);
        switch (cfg.loss) {
          case LossKind::fixed_gaussian: nll = fixed_sigma_nll_node(g, head.pred, yb, cfg.fixed_sigma); break;
          case LossKind::hetero_gaussian: nll = gaussian_hetero_nll_node(g, head.pred, head.s, yb); break;
          default: nll = laplace_hetero_nll_node(g, head.pred, head.s, yb); break;
        }
      }
      NodeId objective = nll;
      if (cfg.opt.weight_decay != 0.0) {
        NodeId wd = weight_decay_node(g, ids, spec.dropout_p, N);
        objective = g.add(nll, cfg.opt.weight_decay == 1.0 ? wd : g.scale(wd, cfg.opt.weight_decay));
      }
      double value = g.value(objective);
      if (!std::isfinite(value))
        throw numeric_error("train: non-finite loss at step " + std::to_string(result.steps));
      GradientMap grads = g.backward(objective);
      train_step(opt, params, collect_grads(grads, ids, params));

      result.final_objective = value;
      epoch_sum += value;
      ++epoch_batches;
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        result.epoch_objective.push_back(epoch_sum / static_cast<double>(epoch_batches));
        return result;
      }
    }
    result.epoch_objective.push_back(epoch_sum / static_cast<double>(epoch_batches));
  }
  return result;
}

}  // namespace alea

#endif  // ALEA_TRAIN_HPP
