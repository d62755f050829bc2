#ifndef ALEA_OPTIMIZER_HPP
#define ALEA_OPTIMIZER_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "alea/graph.hpp"
#include "alea/network.hpp"
#include "alea/tensor.hpp"

namespace alea {

struct RmsPropConfig {
  double lr = 1e-3;
  double decay = 0.9;
  double eps = 1e-8;
  // scale on the (1-p)/(2N)*||W||^2 loss term; decay enters the gradient
  // through that term, never as a separate decoupled update
  double weight_decay = 1.0;
};

struct OptimizerState {
  RmsPropConfig cfg;
  std::vector<Tensor> acc;  // one accumulator per tensor in Parameters::flat() order

  static OptimizerState init(const Parameters& params, RmsPropConfig cfg) {
    OptimizerState st;
    st.cfg = cfg;
    for (const Tensor* t : params.flat()) st.acc.push_back(Tensor::zeros(t->shape()));
    return st;
  }
};

/// Pull per-parameter gradients out of a GradientMap in flat() order.
/// Parameters the loss does not touch get zero gradients.
inline std::vector<Tensor> collect_grads(const GradientMap& gm, const ParamNodes& ids,
                                         const Parameters& params) {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    out.push_back(gm.get_or_zero(ids.W[l], params.layers[l].W.shape()));
    out.push_back(gm.get_or_zero(ids.b[l], params.layers[l].b.shape()));
  }
  return out;
}

/// In-place RMSProp step. Rejects non-finite gradients before touching
/// any state, so a failed step leaves parameters unchanged.
inline void train_step(OptimizerState& state, Parameters& params, const std::vector<Tensor>& grads) {
  std::vector<Tensor*> flat = params.flat();
  if (grads.size() != flat.size() || state.acc.size() != flat.size())
    throw std::invalid_argument("train_step: gradient count mismatch");
  for (std::size_t k = 0; k < flat.size(); ++k) {
    if (!grads[k].same_shape(*flat[k]))
      throw std::invalid_argument("train_step: gradient shape mismatch at tensor " + std::to_string(k));
    if (!grads[k].all_finite()) throw numeric_error("train_step: non-finite gradient at tensor " + std::to_string(k));
  }
  const RmsPropConfig& c = state.cfg;
  for (std::size_t k = 0; k < flat.size(); ++k) {
    Tensor& w = *flat[k];
    Tensor& a = state.acc[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      a[i] = c.decay * a[i] + (1.0 - c.decay) * g[i] * g[i];
      w[i] -= c.lr * g[i] / (std::sqrt(a[i]) + c.eps);
    }
  }
}

}  // namespace alea

#endif  // ALEA_OPTIMIZER_HPP
