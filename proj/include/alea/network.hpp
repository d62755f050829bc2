#ifndef ALEA_NETWORK_HPP
#define ALEA_NETWORK_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "alea/graph.hpp"
#include "alea/io_util.hpp"
#include "alea/rng.hpp"
#include "alea/tensor.hpp"

namespace alea {

enum class Head {
  regression_plain,       // outputs yhat (D)
  regression_hetero,      // outputs [yhat, s] (2D), s = log variance
  classification_plain,   // outputs logits (C)
  classification_hetero   // outputs [logits, s_logits] (2C), s_logits = log sigma
};

inline bool head_is_hetero(Head h) {
  return h == Head::regression_hetero || h == Head::classification_hetero;
}

inline bool head_is_regression(Head h) {
  return h == Head::regression_plain || h == Head::regression_hetero;
}

/// MLP architecture. layer_widths is [input, hidden...]; the head layer
/// maps the last hidden width onto output_dim (plain) or 2*output_dim
/// (heteroscedastic, prediction columns first then log-scale columns).
/// Dropout is applied to every hidden activation; input_dropout extends
/// it to the network input (off by default, see README).
struct NetworkSpec {
  std::vector<std::size_t> layer_widths;
  std::size_t output_dim = 1;
  double dropout_p = 0.2;
  Head head = Head::regression_plain;
  double s_bias_init = -2.0;
  bool input_dropout = false;

  std::size_t n_weight_layers() const { return layer_widths.size(); }
  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t head_width() const { return head_is_hetero(head) ? 2 * output_dim : output_dim; }

  // width of the activation feeding weight layer l
  std::size_t fan_in(std::size_t l) const { return layer_widths[l]; }
  std::size_t fan_out(std::size_t l) const {
    return l + 1 < layer_widths.size() ? layer_widths[l + 1] : head_width();
  }

  void validate() const {
    if (layer_widths.size() < 2)
      throw std::invalid_argument("network: need at least one hidden layer");
    for (std::size_t w : layer_widths)
      if (w == 0) throw std::invalid_argument("network: zero layer width");
    if (output_dim == 0) throw std::invalid_argument("network: zero output dim");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
      throw std::invalid_argument("network: dropout_p must be in [0,1), got " + std::to_string(dropout_p));
    if (!head_is_regression(head) && output_dim < 2)
      throw std::invalid_argument("network: classification needs at least 2 classes");
  }
};

struct Layer {
  Tensor W;  // fan_in x fan_out
  Tensor b;  // fan_out
};

struct Parameters {
  std::vector<Layer> layers;

  bool all_finite() const {
    for (const Layer& l : layers)
      if (!l.W.all_finite() || !l.b.all_finite()) return false;
    return true;
  }

  // flat view in a fixed order: W0, b0, W1, b1, ...
  std::vector<Tensor*> flat() {
    std::vector<Tensor*> out;
    for (Layer& l : layers) {
      out.push_back(&l.W);
      out.push_back(&l.b);
    }
    return out;
  }
  std::vector<const Tensor*> flat() const {
    std::vector<const Tensor*> out;
    for (const Layer& l : layers) {
      out.push_back(&l.W);
      out.push_back(&l.b);
    }
    return out;
  }
};

/// He-initialized weights, zero biases; for heteroscedastic heads the
/// log-scale half of the head bias starts at s_bias_init so predicted
/// noise starts small.
inline Parameters init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Parameters params;
  for (std::size_t l = 0; l < spec.n_weight_layers(); ++l) {
    std::size_t in = spec.fan_in(l), out = spec.fan_out(l);
    RngStream rng = RngStream::derive(seed, {0x11, l});
    Tensor W = Tensor::zeros({in, out});
    double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (double& w : W.values()) w = scale * rng.normal();
    Tensor b = Tensor::zeros({out});
    bool is_head = l + 1 == spec.n_weight_layers();
    if (is_head && head_is_hetero(spec.head))
      for (std::size_t j = spec.output_dim; j < 2 * spec.output_dim; ++j) b[j] = spec.s_bias_init;
    params.layers.push_back({std::move(W), std::move(b)});
  }
  return params;
}

/// One Bernoulli(1-p) keep mask per weight layer, over the units feeding
/// that layer, shared across the batch. Entry 1 keeps a unit. Fully
/// determined by (seed, sample index). Layer 0 covers the network input
/// and is all ones unless input_dropout is set.
struct DropoutMask {
  std::vector<Tensor> keep;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
};

inline bool dropout_active(const NetworkSpec& spec, std::size_t layer) {
  return spec.dropout_p > 0.0 && (layer > 0 || spec.input_dropout);
}

inline DropoutMask sample_mask(const NetworkSpec& spec, std::uint64_t seed, std::uint64_t index) {
  DropoutMask m;
  m.seed = seed;
  m.index = index;
  for (std::size_t l = 0; l < spec.n_weight_layers(); ++l) {
    Tensor k = Tensor::full({spec.fan_in(l)}, 1.0);
    if (dropout_active(spec, l)) {
      RngStream rng = RngStream::derive(seed, {0x22, index, l});
      for (double& v : k.values()) v = rng.uniform() < 1.0 - spec.dropout_p ? 1.0 : 0.0;
    }
    m.keep.push_back(std::move(k));
  }
  return m;
}

struct HeadOutput {
  Tensor pred;               // yhat or logits, n x D
  std::optional<Tensor> s;   // log variance / log sigma, n x D
};

struct HeadNodes {
  NodeId raw;   // full head output
  NodeId pred;
  NodeId s = static_cast<NodeId>(-1);
  bool has_s = false;
};

struct ParamNodes {
  std::vector<NodeId> W;
  std::vector<NodeId> b;
};

inline ParamNodes add_parameters(Graph& g, const Parameters& params) {
  ParamNodes ids;
  for (const Layer& l : params.layers) {
    ids.W.push_back(g.input(l.W));
    ids.b.push_back(g.input(l.b));
  }
  return ids;
}

namespace detail {
inline void check_layer_finite(const Tensor& t, std::size_t layer) {
  if (!t.all_finite())
    throw numeric_error("forward: non-finite activation at layer " + std::to_string(layer));
}
}  // namespace detail

/// Taped forward pass. With a mask, units are zeroed and the survivors
/// scaled by 1/(1-p) (inverted dropout), so the expected activation
/// matches the maskless pass; without a mask this is the deterministic
/// MAP pass and needs no rescaling.
inline HeadNodes forward_graph(Graph& g, const ParamNodes& ids, const NetworkSpec& spec,
                               NodeId x, const DropoutMask* mask) {
  if (g.out(x).shape().size() != 2 || g.out(x).cols() != spec.input_dim())
    throw std::invalid_argument("forward: input shape " + shape_str(g.out(x).shape()) +
                                " does not match input width " + std::to_string(spec.input_dim()));
  if (mask && mask->keep.size() != spec.n_weight_layers())
    throw std::invalid_argument("forward: mask layer count mismatch");
  NodeId h = x;
  for (std::size_t l = 0; l < spec.n_weight_layers(); ++l) {
    if (mask && dropout_active(spec, l)) {
      if (mask->keep[l].size() != spec.fan_in(l))
        throw std::invalid_argument("forward: mask width mismatch at layer " + std::to_string(l));
      h = g.mul(h, g.input(mask->keep[l]));
      h = g.scale(h, 1.0 / (1.0 - spec.dropout_p));
    }
    h = g.add(g.matmul(h, ids.W[l]), ids.b[l]);
    detail::check_layer_finite(g.out(h), l);
    if (l + 1 < spec.n_weight_layers()) h = g.relu(h);
  }
  HeadNodes out;
  out.raw = h;
  if (head_is_hetero(spec.head)) {
    out.pred = g.slice_cols(h, 0, spec.output_dim);
    out.s = g.slice_cols(h, spec.output_dim, 2 * spec.output_dim);
    out.has_s = true;
  } else {
    out.pred = h;
  }
  return out;
}

/// Tape-free forward pass, same arithmetic as forward_graph.
inline HeadOutput forward_eval(const Parameters& params, const NetworkSpec& spec,
                               const Tensor& x, const DropoutMask* mask) {
  if (x.shape().size() != 2 || x.cols() != spec.input_dim())
    throw std::invalid_argument("forward: input shape " + shape_str(x.shape()) +
                                " does not match input width " + std::to_string(spec.input_dim()));
  if (mask && mask->keep.size() != spec.n_weight_layers())
    throw std::invalid_argument("forward: mask layer count mismatch");
  Tensor h = x;
  for (std::size_t l = 0; l < spec.n_weight_layers(); ++l) {
    std::size_t in = spec.fan_in(l), out = spec.fan_out(l), n = h.rows();
    if (mask && dropout_active(spec, l)) {
      if (mask->keep[l].size() != in)
        throw std::invalid_argument("forward: mask width mismatch at layer " + std::to_string(l));
      const Tensor& k = mask->keep[l];
      double inv_keep = 1.0 / (1.0 - spec.dropout_p);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < in; ++j) h.at(i, j) *= k[j] * inv_keep;
    }
    const Layer& layer = params.layers[l];
    Tensor next = Tensor::zeros({n, out});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < in; ++p) {
        double hip = h.at(i, p);
        if (hip == 0.0) continue;
        for (std::size_t j = 0; j < out; ++j) next.at(i, j) += hip * layer.W.at(p, j);
      }
      for (std::size_t j = 0; j < out; ++j) next.at(i, j) += layer.b[j];
    }
    detail::check_layer_finite(next, l);
    if (l + 1 < spec.n_weight_layers())
      for (double& v : next.values()) v = v > 0.0 ? v : 0.0;
    h = std::move(next);
  }
  HeadOutput out;
  if (head_is_hetero(spec.head)) {
    std::size_t n = h.rows(), D = spec.output_dim;
    Tensor pred = Tensor::zeros({n, D});
    Tensor s = Tensor::zeros({n, D});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < D; ++j) {
        pred.at(i, j) = h.at(i, j);
        s.at(i, j) = h.at(i, j + D);
      }
    out.pred = std::move(pred);
    out.s = std::move(s);
  } else {
    out.pred = std::move(h);
  }
  return out;
}

/// (1-p)/(2N) * sum of squared weights; biases excluded.
inline double weight_decay_term(const Parameters& params, double dropout_p, std::size_t N) {
  if (N < 1) throw std::invalid_argument("weight_decay_term: N must be >= 1");
  double ss = 0.0;
  for (const Layer& l : params.layers)
    for (double w : l.W.values()) ss += w * w;
  return (1.0 - dropout_p) / (2.0 * static_cast<double>(N)) * ss;
}

inline NodeId weight_decay_node(Graph& g, const ParamNodes& ids, double dropout_p, std::size_t N) {
  if (N < 1) throw std::invalid_argument("weight_decay_term: N must be >= 1");
  NodeId acc = static_cast<NodeId>(-1);
  bool first = true;
  for (NodeId w : ids.W) {
    NodeId ss = g.sum(g.square(w));
    acc = first ? ss : g.add(acc, ss);
    first = false;
  }
  return g.scale(acc, (1.0 - dropout_p) / (2.0 * static_cast<double>(N)));
}

// --- checkpoint format ------------------------------------------------
//
//   alea-checkpoint 1
//   layers <L>
//   then per layer:
//     W <rows> <cols> followed by rows*cols values, row-major
//     b <n> followed by n values
// values are %.17g, whitespace separated; exact float64 round-trip.

inline std::string checkpoint_to_string(const Parameters& params) {
  std::ostringstream out;
  out << "alea-checkpoint 1\n";
  out << "layers " << params.layers.size() << "\n";
  for (const Layer& l : params.layers) {
    out << "W " << l.W.rows() << " " << l.W.cols() << "\n";
    for (std::size_t i = 0; i < l.W.size(); ++i)
      out << fmt_full(l.W[i]) << (i + 1 == l.W.size() ? "\n" : " ");
    out << "b " << l.b.size() << "\n";
    for (std::size_t i = 0; i < l.b.size(); ++i)
      out << fmt_full(l.b[i]) << (i + 1 == l.b.size() ? "\n" : " ");
  }
  return out.str();
}

inline void save_checkpoint(const Parameters& params, const std::string& path) {
  atomic_write(path, checkpoint_to_string(params));
}

inline Parameters checkpoint_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "alea-checkpoint" || version != 1)
    throw std::invalid_argument("checkpoint: bad header");
  std::string tag;
  std::size_t n_layers = 0;
  in >> tag >> n_layers;
  if (tag != "layers") throw std::invalid_argument("checkpoint: expected layer count");
  Parameters params;
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::size_t rows = 0, cols = 0, bn = 0;
    in >> tag >> rows >> cols;
    if (tag != "W" || rows == 0 || cols == 0)
      throw std::invalid_argument("checkpoint: bad weight block at layer " + std::to_string(l));
    std::vector<double> wv(rows * cols);
    for (double& v : wv) in >> v;
    in >> tag >> bn;
    if (tag != "b" || bn != cols)
      throw std::invalid_argument("checkpoint: bad bias block at layer " + std::to_string(l));
    std::vector<double> bv(bn);
    for (double& v : bv) in >> v;
    if (!in) throw std::invalid_argument("checkpoint: truncated at layer " + std::to_string(l));
    params.layers.push_back({Tensor({rows, cols}, std::move(wv)), Tensor({bn}, std::move(bv))});
  }
  if (!params.all_finite()) throw std::invalid_argument("checkpoint: non-finite parameter");
  return params;
}

inline Parameters load_checkpoint(const std::string& path) {
  return checkpoint_from_string(read_file(path));
}

}  // namespace alea

#endif  // ALEA_NETWORK_HPP
