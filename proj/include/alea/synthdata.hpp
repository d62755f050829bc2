#ifndef ALEA_SYNTHDATA_HPP
#define ALEA_SYNTHDATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "alea/io_util.hpp"
#include "alea/predict.hpp"
#include "alea/rng.hpp"
#include "alea/tensor.hpp"

namespace alea {

struct Provenance {
  std::string generator;
  std::uint64_t seed = 0;
  std::string params;
  bool ood_overlap_warning = false;
};

struct Dataset {
  Task task = Task::regression;
  Tensor inputs;                       // n x d
  Tensor targets;                      // n x 1 (regression)
  std::vector<int> labels;             // n (classification)
  std::optional<Tensor> sigma_true;    // n x 1 noise scale / flip probability
  std::vector<std::size_t> corrupted;  // rows altered by corrupt_labels
  Provenance provenance;

  std::size_t n() const { return inputs.rows(); }
  std::size_t dim() const { return inputs.cols(); }
};

// --- heteroscedastic regression -----------------------------------------
//
// x ~ Uniform[x_low, x_high]^d; with u = mean(x) over dimensions,
//   f*(x) = amp * sin(2*pi*freq*u)
//   sigma*(x) = sigma_base + sigma_slope * |u|
//   y = f*(x) + sigma*(x) * eps,  eps ~ N(0,1)
// For d = 1 these are the documented defaults sin(2*pi*x) and
// 0.05 + 0.45*|x|.

struct RegressionDataConfig {
  std::size_t d = 1;
  double x_low = -1.0;
  double x_high = 1.0;
  double amp = 1.0;
  double freq = 1.0;
  double sigma_base = 0.05;
  double sigma_slope = 0.45;

  void validate() const {
    if (d == 0) throw std::invalid_argument("gen_hetero_regression: d must be >= 1");
    if (!(x_low < x_high)) throw std::invalid_argument("gen_hetero_regression: need x_low < x_high");
    if (sigma_base < 0.0 || sigma_slope < 0.0)
      throw std::invalid_argument("gen_hetero_regression: negative noise scale");
  }

  double f_star(double u) const { return amp * std::sin(2.0 * 3.14159265358979323846 * freq * u); }
  double sigma_star(double u) const { return sigma_base + sigma_slope * std::abs(u); }

  std::string describe() const {
    std::ostringstream s;
    s << "d=" << d << " x=[" << fmt_sig6(x_low) << "," << fmt_sig6(x_high) << "] amp="
      << fmt_sig6(amp) << " freq=" << fmt_sig6(freq) << " sigma=" << fmt_sig6(sigma_base) << "+"
      << fmt_sig6(sigma_slope) << "|u|";
    return s.str();
  }
};

inline Dataset gen_hetero_regression(std::size_t n, std::uint64_t seed,
                                     const RegressionDataConfig& cfg = {}) {
  if (n < 1) throw std::invalid_argument("gen_hetero_regression: n must be >= 1");
  cfg.validate();
  RngStream rng = RngStream::derive(seed, {0x51});
  Dataset ds;
  ds.task = Task::regression;
  ds.inputs = Tensor::zeros({n, cfg.d});
  ds.targets = Tensor::zeros({n, 1});
  ds.sigma_true = Tensor::zeros({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double u = 0.0;
    for (std::size_t j = 0; j < cfg.d; ++j) {
      double x = rng.uniform(cfg.x_low, cfg.x_high);
      ds.inputs.at(i, j) = x;
      u += x;
    }
    u /= static_cast<double>(cfg.d);
    double sigma = cfg.sigma_star(u);
    ds.targets.at(i, 0) = cfg.f_star(u) + sigma * rng.normal();
    (*ds.sigma_true).at(i, 0) = sigma;
  }
  ds.provenance = {"hetero_regression", seed, cfg.describe(), false};
  return ds;
}

// --- toy classification ---------------------------------------------------
//
// C Gaussian clusters in 2-D, means evenly spaced on a circle. Labels are
// flipped to a uniformly random other class with probability
//   rho(x) = rho_max * exp(-margin(x) / rho_bandwidth)
// where margin(x) is the gap between the distances to the second-nearest
// and nearest cluster means, so flips concentrate near boundaries.
// rho_const, when set, overrides rho(x) with a constant.

struct ClassificationDataConfig {
  std::size_t classes = 4;
  double cluster_radius = 2.0;
  double cluster_std = 0.4;
  double rho_max = 0.0;
  double rho_bandwidth = 0.25;
  std::optional<double> rho_const;
  double mean_shift = 0.0;  // translation of every cluster mean (OOD)

  void validate() const {
    if (classes < 2) throw std::invalid_argument("gen_toy_classification: need >= 2 classes");
    if (!(cluster_std > 0.0)) throw std::invalid_argument("gen_toy_classification: cluster_std must be positive");
    if (!(cluster_radius > 0.0)) throw std::invalid_argument("gen_toy_classification: cluster_radius must be positive");
    if (rho_max < 0.0 || rho_max > 1.0)
      throw std::invalid_argument("gen_toy_classification: rho_max must be in [0,1]");
    if (!(rho_bandwidth > 0.0))
      throw std::invalid_argument("gen_toy_classification: rho_bandwidth must be positive");
    if (rho_const && (*rho_const < 0.0 || *rho_const > 1.0))
      throw std::invalid_argument("gen_toy_classification: rho_const must be in [0,1]");
  }

  std::vector<std::pair<double, double>> means() const {
    std::vector<std::pair<double, double>> m;
    for (std::size_t c = 0; c < classes; ++c) {
      double theta = 2.0 * 3.14159265358979323846 * static_cast<double>(c) / static_cast<double>(classes);
      m.push_back({cluster_radius * std::cos(theta) + mean_shift,
                   cluster_radius * std::sin(theta) + mean_shift});
    }
    return m;
  }

  double rho_at(double x0, double x1) const {
    if (rho_const) return *rho_const;
    if (rho_max == 0.0) return 0.0;
    auto m = means();
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    for (auto& [mx, my] : m) {
      double d = std::hypot(x0 - mx, x1 - my);
      if (d < d1) {
        d2 = d1;
        d1 = d;
      } else if (d < d2) {
        d2 = d;
      }
    }
    return rho_max * std::exp(-(d2 - d1) / rho_bandwidth);
  }

  std::string describe() const {
    std::ostringstream s;
    s << "C=" << classes << " r=" << fmt_sig6(cluster_radius) << " std=" << fmt_sig6(cluster_std)
      << " rho_max=" << fmt_sig6(rho_max) << " bw=" << fmt_sig6(rho_bandwidth);
    if (rho_const) s << " rho_const=" << fmt_sig6(*rho_const);
    if (mean_shift != 0.0) s << " shift=" << fmt_sig6(mean_shift);
    return s.str();
  }
};

inline Dataset gen_toy_classification(std::size_t n, std::uint64_t seed,
                                      const ClassificationDataConfig& cfg = {}) {
  cfg.validate();
  if (n < cfg.classes) throw std::invalid_argument("gen_toy_classification: need n >= classes");
  RngStream rng = RngStream::derive(seed, {0x52});
  auto means = cfg.means();
  Dataset ds;
  ds.task = Task::classification;
  ds.inputs = Tensor::zeros({n, 2});
  ds.sigma_true = Tensor::zeros({n, 1});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = rng.index(cfg.classes);
    double x0 = means[c].first + cfg.cluster_std * rng.normal();
    double x1 = means[c].second + cfg.cluster_std * rng.normal();
    ds.inputs.at(i, 0) = x0;
    ds.inputs.at(i, 1) = x1;
    double rho = cfg.rho_at(x0, x1);
    (*ds.sigma_true).at(i, 0) = rho;
    std::size_t label = c;
    // two draws consumed regardless of rho so the stream layout is stable
    double flip_u = rng.uniform();
    std::size_t alt = rng.index(cfg.classes - 1);
    if (flip_u < rho) label = alt >= c ? alt + 1 : alt;
    ds.labels[i] = static_cast<int>(label);
  }
  ds.provenance = {"toy_classification", seed, cfg.describe(), false};
  return ds;
}

// --- corruption, subsetting, OOD -----------------------------------------

namespace detail {
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed,
                                                   std::uint64_t tag) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng = RngStream::derive(seed, {tag});
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  return perm;
}
}  // namespace detail

/// Exactly round(fraction*n) rows altered: regression targets replaced
/// by uniform draws from the marginal target range, classification
/// labels flipped to a uniformly random other class. Indices recorded.
inline Dataset corrupt_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("corrupt_labels: fraction must be in [0,1]");
  Dataset out = ds;
  std::size_t n = ds.n();
  auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (k == 0) return out;
  std::vector<std::size_t> perm = detail::seeded_permutation(n, seed, 0x53);
  std::vector<std::size_t> idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(idx.begin(), idx.end());
  RngStream rng = RngStream::derive(seed, {0x54});
  if (ds.task == Task::regression) {
    double lo = ds.targets[0], hi = ds.targets[0];
    for (double v : ds.targets.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (std::size_t i : idx) out.targets.at(i, 0) = rng.uniform(lo, hi);
  } else {
    std::size_t C = 0;
    for (int l : ds.labels) C = std::max(C, static_cast<std::size_t>(l) + 1);
    if (C < 2) throw std::invalid_argument("corrupt_labels: need at least 2 classes");
    for (std::size_t i : idx) {
      auto cur = static_cast<std::size_t>(ds.labels[i]);
      std::size_t alt = rng.index(C - 1);
      out.labels[i] = static_cast<int>(alt >= cur ? alt + 1 : alt);
    }
  }
  out.corrupted = std::move(idx);
  return out;
}

/// Uniform sample without replacement of round(fraction*n) rows, kept in
/// original order. Prefixes of one fixed permutation, so subsets under
/// the same seed are nested and fraction 1 is the identity.
inline Dataset subset(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("subset: fraction must be in (0,1]");
  std::size_t n = ds.n();
  auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (k == 0) throw std::invalid_argument("subset: resulting size 0");
  std::vector<std::size_t> perm = detail::seeded_permutation(n, seed, 0x55);
  std::vector<std::size_t> idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.task = ds.task;
  out.provenance = ds.provenance;
  out.inputs = Tensor::zeros({k, ds.dim()});
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t j = 0; j < ds.dim(); ++j) out.inputs.at(r, j) = ds.inputs.at(idx[r], j);
  if (ds.task == Task::regression) {
    out.targets = Tensor::zeros({k, 1});
    for (std::size_t r = 0; r < k; ++r) out.targets.at(r, 0) = ds.targets.at(idx[r], 0);
  } else {
    out.labels.resize(k);
    for (std::size_t r = 0; r < k; ++r) out.labels[r] = ds.labels[idx[r]];
  }
  if (ds.sigma_true) {
    out.sigma_true = Tensor::zeros({k, 1});
    for (std::size_t r = 0; r < k; ++r) (*out.sigma_true).at(r, 0) = (*ds.sigma_true).at(idx[r], 0);
  }
  if (!ds.corrupted.empty()) {
    for (std::size_t r = 0; r < k; ++r)
      if (std::binary_search(ds.corrupted.begin(), ds.corrupted.end(), idx[r]))
        out.corrupted.push_back(r);
  }
  return out;
}

/// Fresh inputs outside the training support, targets from the same
/// ground-truth process. The new input range starts shift above the
/// training range and spans half its width; the defaults give
/// x ~ Uniform[2, 3].
inline Dataset ood_shift_regression(std::size_t n, std::uint64_t seed,
                                    const RegressionDataConfig& cfg, double shift) {
  if (!(shift > 0.0)) throw std::invalid_argument("ood_shift: shift must be positive");
  RegressionDataConfig shifted = cfg;
  shifted.x_low = cfg.x_high + shift;
  shifted.x_high = shifted.x_low + (cfg.x_high - cfg.x_low) / 2.0;
  Dataset ds = gen_hetero_regression(n, seed, shifted);
  ds.provenance.generator = "hetero_regression_ood";
  return ds;
}

/// Cluster means translated by shift along both coordinates. Flags an
/// overlap warning when a shifted mean lands within 3 cluster standard
/// deviations of an original mean.
inline Dataset ood_shift_classification(std::size_t n, std::uint64_t seed,
                                        const ClassificationDataConfig& cfg, double shift) {
  if (!(shift > 0.0)) throw std::invalid_argument("ood_shift: shift must be positive");
  ClassificationDataConfig shifted = cfg;
  shifted.mean_shift = cfg.mean_shift + shift;
  Dataset ds = gen_toy_classification(n, seed, shifted);
  ds.provenance.generator = "toy_classification_ood";
  auto orig = cfg.means(), moved = shifted.means();
  for (auto& [ax, ay] : moved)
    for (auto& [bx, by] : orig)
      if (std::hypot(ax - bx, ay - by) < 3.0 * cfg.cluster_std) ds.provenance.ood_overlap_warning = true;
  return ds;
}

// --- dataset files ---------------------------------------------------------
// header: x0..x{d-1},y[,sigma_true][,corrupted]

inline std::string dataset_to_csv(const Dataset& ds, const std::string& trailer = "") {
  std::ostringstream out;
  for (std::size_t j = 0; j < ds.dim(); ++j) out << 'x' << j << ',';
  out << 'y';
  if (ds.sigma_true) out << ",sigma_true";
  bool has_corrupted = !ds.corrupted.empty();
  if (has_corrupted) out << ",corrupted";
  out << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) out << fmt_full(ds.inputs.at(i, j)) << ',';
    if (ds.task == Task::regression)
      out << fmt_full(ds.targets.at(i, 0));
    else
      out << ds.labels[i];
    if (ds.sigma_true) out << ',' << fmt_full((*ds.sigma_true).at(i, 0));
    if (has_corrupted)
      out << ',' << (std::binary_search(ds.corrupted.begin(), ds.corrupted.end(), i) ? 1 : 0);
    out << '\n';
  }
  if (!trailer.empty()) out << trailer << '\n';
  return out.str();
}

inline Dataset dataset_from_csv(const std::string& text, Task task) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset csv: empty file");
  auto header = split_csv_line(line);
  std::size_t d = 0;
  while (d < header.size() && header[d] == "x" + std::to_string(d)) ++d;
  if (d == 0 || d >= header.size() || header[d] != "y")
    throw std::invalid_argument("dataset csv: bad header");
  std::size_t col = d + 1;
  bool has_sigma = col < header.size() && header[col] == "sigma_true";
  if (has_sigma) ++col;
  bool has_corrupted = col < header.size() && header[col] == "corrupted";
  if (has_corrupted) ++col;
  if (col != header.size()) throw std::invalid_argument("dataset csv: unexpected column '" + header[col] + "'");

  std::vector<double> xs, ys, sigmas;
  std::vector<int> labels;
  std::vector<std::size_t> corrupted;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::invalid_argument("dataset csv: bad row '" + line + "'");
    for (std::size_t j = 0; j < d; ++j) xs.push_back(parse_double(cells[j]));
    if (task == Task::regression)
      ys.push_back(parse_double(cells[d]));
    else
      labels.push_back(static_cast<int>(parse_long(cells[d])));
    std::size_t c = d + 1;
    if (has_sigma) sigmas.push_back(parse_double(cells[c++]));
    if (has_corrupted && parse_long(cells[c]) != 0) corrupted.push_back(n);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("dataset csv: no rows");
  Dataset ds;
  ds.task = task;
  ds.inputs = Tensor({n, d}, std::move(xs));
  if (task == Task::regression) {
    ds.targets = Tensor({n, 1}, std::move(ys));
  } else {
    ds.labels = std::move(labels);
  }
  if (has_sigma) ds.sigma_true = Tensor({n, 1}, std::move(sigmas));
  ds.corrupted = std::move(corrupted);
  ds.provenance = {"csv", 0, "", false};
  return ds;
}

}  // namespace alea

#endif  // ALEA_SYNTHDATA_HPP
