#ifndef ALEA_EXPERIMENT_HPP
#define ALEA_EXPERIMENT_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "alea/eval.hpp"
#include "alea/io_util.hpp"
#include "alea/losses.hpp"
#include "alea/network.hpp"
#include "alea/predict.hpp"
#include "alea/synthdata.hpp"
#include "alea/train.hpp"

namespace alea {

class self_check_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { baseline, aleatoric, epistemic, combined };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::aleatoric: return "aleatoric";
    case Variant::epistemic: return "epistemic";
    case Variant::combined: return "combined";
  }
  return "?";
}

inline bool variant_uses_hetero_head(Variant v) {
  return v == Variant::aleatoric || v == Variant::combined;
}
inline bool variant_uses_mc_dropout(Variant v) {
  return v == Variant::epistemic || v == Variant::combined;
}

struct ExperimentConfig {
  Task task = Task::regression;
  Variant variant = Variant::baseline;

  std::vector<std::size_t> hidden = {64, 64};
  double dropout_p = 0.2;
  double s_bias_init = -2.0;
  bool input_dropout = false;

  std::size_t epochs = 50;
  std::size_t max_steps = 0;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1.0;
  double fixed_sigma = 1.0;
  std::size_t noise_T = 10;
  std::uint64_t train_seed = 0;

  Likelihood family = Likelihood::gaussian;

  std::string generator;
  std::size_t n = 1000;
  std::uint64_t data_seed = 0;
  RegressionDataConfig reg;
  ClassificationDataConfig cls;
  double corrupt_fraction = 0.0;
  std::uint64_t corrupt_seed = 0;
  double subset_fraction = 1.0;
  std::uint64_t subset_seed = 0;
  bool ood = false;
  double ood_shift_amount = 1.0;
  std::uint64_t ood_seed = 0;
  std::size_t test_n = 1000;
  std::uint64_t test_seed = 0;
  bool test_clean = true;

  std::size_t T = 50;
  std::uint64_t infer_seed = 0;
  std::size_t infer_noise_T = 100;

  std::size_t bins = 10;
  std::vector<double> percentiles = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> calibration_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

  std::string out_dir;
  bool write_datasets = false;

  NetworkSpec network_spec(std::size_t input_dim, std::size_t output_dim) const {
    NetworkSpec spec;
    spec.layer_widths.push_back(input_dim);
    for (std::size_t w : hidden) spec.layer_widths.push_back(w);
    spec.output_dim = output_dim;
    spec.dropout_p = dropout_p;
    spec.s_bias_init = s_bias_init;
    spec.input_dropout = input_dropout;
    if (task == Task::regression)
      spec.head = variant_uses_hetero_head(variant) ? Head::regression_hetero : Head::regression_plain;
    else
      spec.head = variant_uses_hetero_head(variant) ? Head::classification_hetero : Head::classification_plain;
    return spec;
  }

  LossKind loss_kind() const {
    if (task == Task::regression) {
      if (!variant_uses_hetero_head(variant)) return LossKind::fixed_gaussian;
      return family == Likelihood::gaussian ? LossKind::hetero_gaussian : LossKind::hetero_laplace;
    }
    return variant_uses_hetero_head(variant) ? LossKind::stochastic_softmax : LossKind::softmax;
  }
};

// --- flat JSON config ------------------------------------------------------

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(const nlohmann::json& j) : j_(j) {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  std::string str(const std::string& key, const char* fallback = nullptr) {
    if (!has(key)) {
      if (fallback) return fallback;
      throw std::invalid_argument("config: missing required key '" + key + "'");
    }
    if (!j_[key].is_string()) throw std::invalid_argument("config: key '" + key + "' must be a string");
    return j_[key].get<std::string>();
  }

  double num(const std::string& key, std::optional<double> fallback = std::nullopt) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw std::invalid_argument("config: missing required key '" + key + "'");
    }
    if (!j_[key].is_number()) throw std::invalid_argument("config: key '" + key + "' must be a number");
    return j_[key].get<double>();
  }

  std::size_t uint(const std::string& key, std::optional<std::size_t> fallback = std::nullopt) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw std::invalid_argument("config: missing required key '" + key + "'");
    }
    if (!j_[key].is_number_integer() || j_[key].get<long long>() < 0)
      throw std::invalid_argument("config: key '" + key + "' must be a nonnegative integer");
    return j_[key].get<std::size_t>();
  }

  std::uint64_t seed(const std::string& key) {
    if (!has(key)) throw std::invalid_argument("config: missing required seed '" + key + "'");
    if (!j_[key].is_number_integer() || j_[key].get<long long>() < 0)
      throw std::invalid_argument("config: key '" + key + "' must be a nonnegative integer");
    return j_[key].get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    if (!j_[key].is_boolean()) throw std::invalid_argument("config: key '" + key + "' must be a boolean");
    return j_[key].get<bool>();
  }

  std::vector<double> array(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    if (!j_[key].is_array()) throw std::invalid_argument("config: key '" + key + "' must be an array");
    std::vector<double> out;
    for (const auto& v : j_[key]) {
      if (!v.is_number()) throw std::invalid_argument("config: key '" + key + "' must hold numbers");
      out.push_back(v.get<double>());
    }
    return out;
  }

  std::vector<std::size_t> uint_array(const std::string& key, std::vector<std::size_t> fallback) {
    if (!has(key)) return fallback;
    if (!j_[key].is_array()) throw std::invalid_argument("config: key '" + key + "' must be an array");
    std::vector<std::size_t> out;
    for (const auto& v : j_[key]) {
      if (!v.is_number_integer() || v.get<long long>() <= 0)
        throw std::invalid_argument("config: key '" + key + "' must hold positive integers");
      out.push_back(v.get<std::size_t>());
    }
    return out;
  }

  void reject_unknown() const {
    for (const auto& [key, value] : j_.items())
      if (seen_.find(key) == seen_.end())
        throw std::invalid_argument("config: unknown key '" + key + "'");
  }

 private:
  const nlohmann::json& j_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
  }
  detail::ConfigReader r(j);
  ExperimentConfig cfg;

  std::string task = r.str("task");
  if (task == "regression") cfg.task = Task::regression;
  else if (task == "classification") cfg.task = Task::classification;
  else throw std::invalid_argument("config: key 'task' must be regression or classification");

  std::string variant = r.str("variant");
  if (variant == "baseline") cfg.variant = Variant::baseline;
  else if (variant == "aleatoric") cfg.variant = Variant::aleatoric;
  else if (variant == "epistemic") cfg.variant = Variant::epistemic;
  else if (variant == "combined") cfg.variant = Variant::combined;
  else throw std::invalid_argument("config: key 'variant' must be one of baseline|aleatoric|epistemic|combined");

  cfg.hidden = r.uint_array("network.hidden", cfg.hidden);
  cfg.dropout_p = r.num("network.dropout_p", cfg.dropout_p);
  cfg.s_bias_init = r.num("network.s_bias_init", cfg.s_bias_init);
  cfg.input_dropout = r.boolean("network.input_dropout", cfg.input_dropout);

  cfg.epochs = r.uint("training.epochs", cfg.epochs);
  cfg.max_steps = r.uint("training.max_steps", cfg.max_steps);
  cfg.batch_size = r.uint("training.batch_size", cfg.batch_size);
  cfg.lr = r.num("training.lr", cfg.lr);
  cfg.weight_decay = r.num("training.weight_decay", cfg.weight_decay);
  cfg.fixed_sigma = r.num("training.fixed_sigma", cfg.fixed_sigma);
  cfg.noise_T = r.uint("training.noise_T", cfg.noise_T);
  cfg.train_seed = r.seed("training.seed");

  std::string family = r.str("regression.family", "gaussian");
  if (family == "gaussian") cfg.family = Likelihood::gaussian;
  else if (family == "laplace") cfg.family = Likelihood::laplace;
  else throw std::invalid_argument("config: key 'regression.family' must be gaussian or laplace");

  cfg.generator = r.str("data.generator", cfg.task == Task::regression ? "hetero_regression"
                                                                       : "toy_classification");
  cfg.n = r.uint("data.n", cfg.n);
  cfg.data_seed = r.seed("data.seed");
  cfg.reg.d = r.uint("data.d", cfg.reg.d);
  cfg.reg.x_low = r.num("data.x_low", cfg.reg.x_low);
  cfg.reg.x_high = r.num("data.x_high", cfg.reg.x_high);
  cfg.reg.amp = r.num("data.amp", cfg.reg.amp);
  cfg.reg.freq = r.num("data.freq", cfg.reg.freq);
  cfg.reg.sigma_base = r.num("data.sigma_base", cfg.reg.sigma_base);
  cfg.reg.sigma_slope = r.num("data.sigma_slope", cfg.reg.sigma_slope);
  cfg.cls.classes = r.uint("data.classes", cfg.cls.classes);
  cfg.cls.cluster_radius = r.num("data.cluster_radius", cfg.cls.cluster_radius);
  cfg.cls.cluster_std = r.num("data.cluster_std", cfg.cls.cluster_std);
  cfg.cls.rho_max = r.num("data.rho_max", cfg.cls.rho_max);
  cfg.cls.rho_bandwidth = r.num("data.rho_bandwidth", cfg.cls.rho_bandwidth);
  if (r.has("data.rho_const")) cfg.cls.rho_const = r.num("data.rho_const");
  cfg.corrupt_fraction = r.num("data.corrupt_fraction", cfg.corrupt_fraction);
  if (cfg.corrupt_fraction > 0.0) cfg.corrupt_seed = r.seed("data.corrupt_seed");
  else r.has("data.corrupt_seed");  // tolerated but unused
  cfg.subset_fraction = r.num("data.subset_fraction", cfg.subset_fraction);
  if (cfg.subset_fraction < 1.0) cfg.subset_seed = r.seed("data.subset_seed");
  else if (r.has("data.subset_seed")) cfg.subset_seed = r.seed("data.subset_seed");
  cfg.ood = r.boolean("data.ood", cfg.ood);
  cfg.ood_shift_amount = r.num("data.ood_shift", cfg.ood_shift_amount);
  if (cfg.ood) cfg.ood_seed = r.seed("data.ood_seed");
  else r.has("data.ood_seed");
  cfg.test_n = r.uint("data.test_n", cfg.test_n);
  cfg.test_seed = r.seed("data.test_seed");
  cfg.test_clean = r.boolean("data.test_clean", cfg.test_clean);

  cfg.T = r.uint("inference.T", cfg.T);
  cfg.infer_seed = r.seed("inference.seed");
  cfg.infer_noise_T = r.uint("inference.noise_T", cfg.infer_noise_T);

  cfg.bins = r.uint("eval.bins", cfg.bins);
  cfg.percentiles = r.array("eval.percentiles", cfg.percentiles);
  cfg.calibration_grid = r.array("eval.calibration_grid", cfg.calibration_grid);

  cfg.out_dir = r.str("output.dir");
  cfg.write_datasets = r.boolean("output.datasets", cfg.write_datasets);

  r.reject_unknown();

  if (cfg.task == Task::regression && cfg.generator != "hetero_regression")
    throw std::invalid_argument("config: key 'data.generator' must be hetero_regression for regression");
  if (cfg.task == Task::classification && cfg.generator != "toy_classification")
    throw std::invalid_argument("config: key 'data.generator' must be toy_classification for classification");
  if (variant_uses_mc_dropout(cfg.variant) && !(cfg.dropout_p > 0.0))
    throw std::invalid_argument("config: key 'network.dropout_p' must be positive for variant " +
                                std::string(variant_name(cfg.variant)));
  if (cfg.T < 2 && variant_uses_mc_dropout(cfg.variant))
    throw std::invalid_argument("config: key 'inference.T' must be >= 2 for MC dropout variants");
  if (cfg.n < 1 || cfg.test_n < 1) throw std::invalid_argument("config: key 'data.n' must be >= 1");
  if (!(cfg.corrupt_fraction >= 0.0 && cfg.corrupt_fraction <= 1.0))
    throw std::invalid_argument("config: key 'data.corrupt_fraction' must be in [0,1]");
  if (!(cfg.subset_fraction > 0.0 && cfg.subset_fraction <= 1.0))
    throw std::invalid_argument("config: key 'data.subset_fraction' must be in (0,1]");
  if (cfg.out_dir.empty()) throw std::invalid_argument("config: key 'output.dir' must not be empty");
  return cfg;
}

/// The resolved config with every default filled in, as canonical JSON
/// (sorted keys). Its FNV-1a hash identifies the run in all artifacts.
inline std::string resolved_config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["task"] = cfg.task == Task::regression ? "regression" : "classification";
  j["variant"] = variant_name(cfg.variant);
  j["network.hidden"] = cfg.hidden;
  j["network.dropout_p"] = cfg.dropout_p;
  j["network.s_bias_init"] = cfg.s_bias_init;
  j["network.input_dropout"] = cfg.input_dropout;
  j["training.epochs"] = cfg.epochs;
  j["training.max_steps"] = cfg.max_steps;
  j["training.batch_size"] = cfg.batch_size;
  j["training.lr"] = cfg.lr;
  j["training.weight_decay"] = cfg.weight_decay;
  j["training.fixed_sigma"] = cfg.fixed_sigma;
  j["training.noise_T"] = cfg.noise_T;
  j["training.seed"] = cfg.train_seed;
  j["regression.family"] = cfg.family == Likelihood::gaussian ? "gaussian" : "laplace";
  j["data.generator"] = cfg.generator;
  j["data.n"] = cfg.n;
  j["data.seed"] = cfg.data_seed;
  if (cfg.task == Task::regression) {
    j["data.d"] = cfg.reg.d;
    j["data.x_low"] = cfg.reg.x_low;
    j["data.x_high"] = cfg.reg.x_high;
    j["data.amp"] = cfg.reg.amp;
    j["data.freq"] = cfg.reg.freq;
    j["data.sigma_base"] = cfg.reg.sigma_base;
    j["data.sigma_slope"] = cfg.reg.sigma_slope;
  } else {
    j["data.classes"] = cfg.cls.classes;
    j["data.cluster_radius"] = cfg.cls.cluster_radius;
    j["data.cluster_std"] = cfg.cls.cluster_std;
    j["data.rho_max"] = cfg.cls.rho_max;
    j["data.rho_bandwidth"] = cfg.cls.rho_bandwidth;
    if (cfg.cls.rho_const) j["data.rho_const"] = *cfg.cls.rho_const;
  }
  j["data.corrupt_fraction"] = cfg.corrupt_fraction;
  if (cfg.corrupt_fraction > 0.0) j["data.corrupt_seed"] = cfg.corrupt_seed;
  j["data.subset_fraction"] = cfg.subset_fraction;
  if (cfg.subset_fraction < 1.0) j["data.subset_seed"] = cfg.subset_seed;
  j["data.ood"] = cfg.ood;
  if (cfg.ood) {
    j["data.ood_shift"] = cfg.ood_shift_amount;
    j["data.ood_seed"] = cfg.ood_seed;
  }
  j["data.test_n"] = cfg.test_n;
  j["data.test_seed"] = cfg.test_seed;
  j["data.test_clean"] = cfg.test_clean;
  j["inference.T"] = cfg.T;
  j["inference.seed"] = cfg.infer_seed;
  j["inference.noise_T"] = cfg.infer_noise_T;
  j["eval.bins"] = cfg.bins;
  j["eval.percentiles"] = cfg.percentiles;
  j["eval.calibration_grid"] = cfg.calibration_grid;
  j["output.dir"] = cfg.out_dir;
  j["output.datasets"] = cfg.write_datasets;
  return j.dump(2) + "\n";
}

// --- run --------------------------------------------------------------------

struct RunArtifact {
  Task task = Task::regression;
  std::vector<std::map<std::string, std::string>> rows;
  std::string config_hash;
  std::filesystem::path out_dir;
  CalibrationCurve calibration;
  PRCurve pr;
  Parameters params;
  NetworkSpec spec;
};

inline const std::vector<std::string>& metric_columns(Task task) {
  static const std::vector<std::string> reg = {
      "variant", "train_fraction", "test_set", "n_train",      "rms",
      "nll",     "epistemic",      "aleatoric", "total",        "calibration_mse",
      "config_hash"};
  static const std::vector<std::string> cls = {
      "variant",   "train_fraction", "test_set",           "n_train",
      "accuracy",  "iou",            "entropy",            "aleatoric_entropy",
      "epistemic_logit_var", "calibration_mse", "config_hash"};
  return task == Task::regression ? reg : cls;
}

/// One row per artifact row, fixed column order, 6 significant digits
/// for numeric cells (already formatted upstream).
inline std::string emit_table(const std::vector<RunArtifact>& artifacts,
                              const std::vector<std::string>& columns) {
  if (artifacts.empty()) throw std::invalid_argument("emit_table: no artifacts");
  for (const RunArtifact& a : artifacts)
    if (a.task != artifacts[0].task) throw std::invalid_argument("emit_table: mixed tasks");
  std::ostringstream out;
  for (std::size_t c = 0; c < columns.size(); ++c) out << columns[c] << (c + 1 == columns.size() ? '\n' : ',');
  for (const RunArtifact& a : artifacts) {
    for (const auto& row : a.rows) {
      std::vector<std::string> missing;
      for (const std::string& c : columns)
        if (row.find(c) == row.end()) missing.push_back(c);
      if (!missing.empty()) {
        std::string list;
        for (const std::string& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw std::invalid_argument("emit_table: missing columns: " + list);
      }
      for (std::size_t c = 0; c < columns.size(); ++c)
        out << row.at(columns[c]) << (c + 1 == columns.size() ? '\n' : ',');
    }
  }
  return out.str();
}

// --- SVG plots ---------------------------------------------------------------

namespace detail {

inline std::string svg_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string svg_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                                 const std::string& x_label, const std::string& y_label,
                                 bool diagonal, const std::string& hash_comment) {
  if (xs.empty() || xs.size() != ys.size())
    throw std::invalid_argument("plot: empty or mismatched curve");
  const double W = 640, H = 480, ML = 70, MR = 20, MT = 20, MB = 50;
  double x_lo = *std::min_element(xs.begin(), xs.end());
  double x_hi = *std::max_element(xs.begin(), xs.end());
  double y_lo = *std::min_element(ys.begin(), ys.end());
  double y_hi = *std::max_element(ys.begin(), ys.end());
  if (diagonal) {
    x_lo = std::min(x_lo, 0.0); x_hi = std::max(x_hi, 1.0);
    y_lo = std::min(y_lo, 0.0); y_hi = std::max(y_hi, 1.0);
  }
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) y_hi = y_lo + 1.0;
  auto px = [&](double x) { return ML + (x - x_lo) / (x_hi - x_lo) * (W - ML - MR); };
  auto py = [&](double y) { return H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  if (!hash_comment.empty()) s << "<!-- " << hash_comment << " -->\n";
  s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  s << "<line x1=\"" << svg_coord(ML) << "\" y1=\"" << svg_coord(H - MB) << "\" x2=\"" << svg_coord(W - MR)
    << "\" y2=\"" << svg_coord(H - MB) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << svg_coord(ML) << "\" y1=\"" << svg_coord(MT) << "\" x2=\"" << svg_coord(ML)
    << "\" y2=\"" << svg_coord(H - MB) << "\" stroke=\"black\"/>\n";
  if (diagonal)
    s << "<line x1=\"" << svg_coord(px(std::max(x_lo, y_lo))) << "\" y1=\"" << svg_coord(py(std::max(x_lo, y_lo)))
      << "\" x2=\"" << svg_coord(px(std::min(x_hi, y_hi))) << "\" y2=\"" << svg_coord(py(std::min(x_hi, y_hi)))
      << "\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>\n";
  s << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i)
    s << svg_coord(px(xs[i])) << ',' << svg_coord(py(ys[i])) << (i + 1 == xs.size() ? "" : " ");
  s << "\"/>\n";
  for (std::size_t i = 0; i < xs.size(); ++i)
    s << "<circle cx=\"" << svg_coord(px(xs[i])) << "\" cy=\"" << svg_coord(py(ys[i]))
      << "\" r=\"3\" fill=\"#1f6fb2\"/>\n";
  s << "<text x=\"" << svg_coord((ML + W - MR) / 2) << "\" y=\"" << svg_coord(H - 12)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << x_label << "</text>\n";
  s << "<text x=\"16\" y=\"" << svg_coord((MT + H - MB) / 2)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\" transform=\"rotate(-90 16 "
    << svg_coord((MT + H - MB) / 2) << ")\">" << y_label << "</text>\n";
  s << "<text x=\"" << svg_coord(ML) << "\" y=\"" << svg_coord(H - MB + 18)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << fmt_sig6(x_lo) << "</text>\n";
  s << "<text x=\"" << svg_coord(W - MR) << "\" y=\"" << svg_coord(H - MB + 18)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << fmt_sig6(x_hi) << "</text>\n";
  s << "<text x=\"" << svg_coord(ML - 8) << "\" y=\"" << svg_coord(H - MB + 4)
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << fmt_sig6(y_lo) << "</text>\n";
  s << "<text x=\"" << svg_coord(ML - 8) << "\" y=\"" << svg_coord(MT + 4)
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << fmt_sig6(y_hi) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace detail

enum class PlotKind { calibration, pr };

inline std::string render_plot(const CalibrationCurve& c, const std::string& hash_comment = "") {
  if (c.grid.empty()) throw std::invalid_argument("plot: empty curve");
  return detail::svg_line_plot(c.grid, c.observed, "nominal", "observed", true, hash_comment);
}

inline std::string render_plot(const PRCurve& c, const std::string& hash_comment = "") {
  if (c.recall.empty()) throw std::invalid_argument("plot: empty curve");
  return detail::svg_line_plot(c.recall, c.value, "recall", "value", false, hash_comment);
}

inline void emit_plot(const CalibrationCurve& c, const std::filesystem::path& path,
                      const std::string& hash_comment = "") {
  atomic_write(path, render_plot(c, hash_comment));
}
inline void emit_plot(const PRCurve& c, const std::filesystem::path& path,
                      const std::string& hash_comment = "") {
  atomic_write(path, render_plot(c, hash_comment));
}

// --- experiment --------------------------------------------------------------

namespace detail {

struct PhaseTimer {
  std::vector<std::pair<std::string, double>> phases;
  std::chrono::steady_clock::time_point mark = std::chrono::steady_clock::now();

  void lap(const std::string& name) {
    auto now = std::chrono::steady_clock::now();
    phases.emplace_back(name, std::chrono::duration<double>(now - mark).count());
    mark = now;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "phase,seconds\n";
    char buf[32];
    for (const auto& [name, secs] : phases) {
      std::snprintf(buf, sizeof buf, "%.3f", secs);
      out << name << ',' << buf << '\n';
    }
    return out.str();
  }
};

struct RegressionEval {
  RegressionDump dump;
  double rms = 0.0, nll = 0.0;
  double mean_epistemic = 0.0, mean_aleatoric = 0.0, mean_total = 0.0;
};

inline RegressionEval eval_regression(const ExperimentConfig& cfg, const Parameters& params,
                                      const NetworkSpec& spec, const Dataset& test) {
  RegressionEval ev;
  std::size_t n = test.n();
  UncertaintyDecomposition d;
  if (variant_uses_mc_dropout(cfg.variant)) {
    PredictiveSamples samples = mc_dropout_predict(params, spec, test.inputs, cfg.T, cfg.infer_seed);
    d = decompose_regression(samples);
  } else {
    PredictiveSamples samples = map_predict(params, spec, test.inputs);
    d = decompose_regression(samples);
  }
  if (!variant_uses_hetero_head(cfg.variant)) {
    // fixed-sigma likelihood: constant aleatoric variance
    double v = cfg.fixed_sigma * cfg.fixed_sigma;
    for (std::size_t i = 0; i < n; ++i) {
      d.aleatoric_var[i] = v;
      d.total_var[i] = d.epistemic_var[i] + d.aleatoric_var[i];
    }
  }
  ev.dump.y_true.resize(n);
  ev.dump.pred_mean.resize(n);
  ev.dump.epistemic_var.resize(n);
  ev.dump.aleatoric_var.resize(n);
  ev.dump.total_var.resize(n);
  double se = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ev.dump.y_true[i] = test.targets.at(i, 0);
    ev.dump.pred_mean[i] = d.mean[i];
    ev.dump.epistemic_var[i] = d.epistemic_var[i];
    ev.dump.aleatoric_var[i] = d.aleatoric_var[i];
    ev.dump.total_var[i] = d.total_var[i];
    double r = ev.dump.y_true[i] - ev.dump.pred_mean[i];
    se += r * r;
    ev.mean_epistemic += d.epistemic_var[i];
    ev.mean_aleatoric += d.aleatoric_var[i];
    ev.mean_total += d.total_var[i];
  }
  ev.rms = std::sqrt(se / static_cast<double>(n));
  ev.mean_epistemic /= static_cast<double>(n);
  ev.mean_aleatoric /= static_cast<double>(n);
  ev.mean_total /= static_cast<double>(n);
  // Gaussian NLL of the predictive distribution (mean, total_var)
  for (std::size_t i = 0; i < n; ++i) {
    double r = ev.dump.y_true[i] - ev.dump.pred_mean[i];
    double v = ev.dump.total_var[i];
    ev.nll += 0.5 * (r * r / v + std::log(v));
  }
  ev.nll /= static_cast<double>(n);
  return ev;
}

struct ClassificationEval {
  ClassificationDump dump;
  Tensor probs;
  std::vector<int> labels;
  double accuracy = 0.0, iou = 0.0;
  double mean_entropy = 0.0, aleatoric_entropy = 0.0, epistemic_logit_var = 0.0;
};

inline ClassificationEval eval_classification(const ExperimentConfig& cfg, const Parameters& params,
                                              const NetworkSpec& spec, const Dataset& test) {
  ClassificationEval ev;
  std::size_t n = test.n(), C = spec.output_dim;
  Tensor logit_var = Tensor::zeros({n});
  if (variant_uses_mc_dropout(cfg.variant)) {
    PredictiveSamples samples = mc_dropout_predict(params, spec, test.inputs, cfg.T, cfg.infer_seed);
    ev.probs = mean_softmax(samples);
    logit_var = epistemic_logit_variance_per_point(samples);
  } else if (cfg.variant == Variant::aleatoric) {
    ev.probs = noise_marginal_probs(params, spec, test.inputs, cfg.infer_noise_T, cfg.infer_seed);
  } else {
    PredictiveSamples samples = map_predict(params, spec, test.inputs);
    ev.probs = mean_softmax(samples);
  }
  if (variant_uses_hetero_head(cfg.variant))
    ev.aleatoric_entropy =
        aleatoric_classification_entropy(params, spec, test.inputs, cfg.infer_noise_T, cfg.infer_seed);
  Tensor entropy = predictive_entropy_rows(ev.probs);
  ev.labels = test.labels;
  ev.dump.probs.assign(C, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (ev.probs.at(i, c) > ev.probs.at(i, best)) best = c;
    ev.dump.label.push_back(test.labels[i]);
    ev.dump.pred_class.push_back(static_cast<int>(best));
    ev.dump.max_prob.push_back(ev.probs.at(i, best));
    ev.dump.entropy.push_back(entropy[i]);
    ev.dump.logit_var.push_back(logit_var[i]);
    for (std::size_t c = 0; c < C; ++c) ev.dump.probs[c][i] = ev.probs.at(i, c);
    ev.mean_entropy += entropy[i];
    ev.epistemic_logit_var += logit_var[i];
  }
  ev.mean_entropy /= static_cast<double>(n);
  ev.epistemic_logit_var /= static_cast<double>(n);
  ClassificationMetrics m = classification_metrics(ev.dump.pred_class, test.labels, C);
  ev.accuracy = m.accuracy;
  ev.iou = m.mean_iou;
  return ev;
}

}  // namespace detail

inline Dataset build_train_dataset(const ExperimentConfig& cfg) {
  Dataset ds = cfg.task == Task::regression
                   ? gen_hetero_regression(cfg.n, cfg.data_seed, cfg.reg)
                   : gen_toy_classification(cfg.n, cfg.data_seed, cfg.cls);
  if (cfg.subset_fraction < 1.0) ds = subset(ds, cfg.subset_fraction, cfg.subset_seed);
  if (cfg.corrupt_fraction > 0.0) ds = corrupt_labels(ds, cfg.corrupt_fraction, cfg.corrupt_seed);
  return ds;
}

inline Dataset build_test_dataset(const ExperimentConfig& cfg) {
  if (cfg.task == Task::regression) return gen_hetero_regression(cfg.test_n, cfg.test_seed, cfg.reg);
  ClassificationDataConfig c = cfg.cls;
  if (cfg.test_clean) {
    c.rho_max = 0.0;
    c.rho_const.reset();
  }
  return gen_toy_classification(cfg.test_n, cfg.test_seed, c);
}

inline Dataset build_ood_dataset(const ExperimentConfig& cfg) {
  if (cfg.task == Task::regression)
    return ood_shift_regression(cfg.test_n, cfg.ood_seed, cfg.reg, cfg.ood_shift_amount);
  ClassificationDataConfig c = cfg.cls;
  if (cfg.test_clean) {
    c.rho_max = 0.0;
    c.rho_const.reset();
  }
  return ood_shift_classification(cfg.test_n, cfg.ood_seed, c, cfg.ood_shift_amount);
}

inline RunArtifact run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  detail::PhaseTimer timer;

  std::string snapshot = resolved_config_json(cfg);
  std::string hash = hex64(fnv1a(snapshot));
  std::string trailer = "# config_hash=" + hash;

  Dataset train = build_train_dataset(cfg);
  Dataset test = build_test_dataset(cfg);
  timer.lap("data");

  std::size_t output_dim = cfg.task == Task::regression ? 1 : cfg.cls.classes;
  NetworkSpec spec = cfg.network_spec(train.dim(), output_dim);
  spec.validate();
  Parameters params = init_network(spec, cfg.train_seed);

  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.max_steps = cfg.max_steps;
  tc.batch_size = cfg.batch_size;
  tc.opt.lr = cfg.lr;
  tc.opt.weight_decay = cfg.weight_decay;
  tc.fixed_sigma = cfg.fixed_sigma;
  tc.noise_T = cfg.noise_T;
  tc.seed = cfg.train_seed;
  tc.loss = cfg.loss_kind();
  train_network(params, spec, train, tc);
  timer.lap("train");

  RunArtifact art;
  art.task = cfg.task;
  art.config_hash = hash;
  art.out_dir = cfg.out_dir;
  art.spec = spec;
  art.params = params;

  auto common_cells = [&](const char* test_set) {
    std::map<std::string, std::string> row;
    row["variant"] = variant_name(cfg.variant);
    row["train_fraction"] = fmt_sig6(cfg.subset_fraction);
    row["test_set"] = test_set;
    row["n_train"] = std::to_string(train.n());
    row["config_hash"] = hash;
    return row;
  };

  std::string pred_csv;
  if (cfg.task == Task::regression) {
    detail::RegressionEval ev = detail::eval_regression(cfg, params, spec, test);
    art.calibration = regression_calibration(ev.dump.pred_mean, ev.dump.total_var, ev.dump.y_true,
                                             cfg.family, cfg.calibration_grid);
    std::vector<double> errors(test.n());
    for (std::size_t i = 0; i < errors.size(); ++i) errors[i] = ev.dump.y_true[i] - ev.dump.pred_mean[i];
    art.pr = precision_recall_uncertainty(ev.dump.total_var, errors, cfg.percentiles, PRValue::rmse);
    auto row = common_cells("in_distribution");
    row["rms"] = fmt_sig6(ev.rms);
    row["nll"] = fmt_sig6(ev.nll);
    row["epistemic"] = fmt_sig6(ev.mean_epistemic);
    row["aleatoric"] = fmt_sig6(ev.mean_aleatoric);
    row["total"] = fmt_sig6(ev.mean_total);
    row["calibration_mse"] = fmt_sig6(calibration_mse(art.calibration));
    art.rows.push_back(std::move(row));
    pred_csv = regression_dump_to_csv(ev.dump, trailer);
    if (cfg.ood) {
      Dataset ood = build_ood_dataset(cfg);
      detail::RegressionEval oev = detail::eval_regression(cfg, params, spec, ood);
      auto orow = common_cells("ood");
      orow["rms"] = fmt_sig6(oev.rms);
      orow["nll"] = fmt_sig6(oev.nll);
      orow["epistemic"] = fmt_sig6(oev.mean_epistemic);
      orow["aleatoric"] = fmt_sig6(oev.mean_aleatoric);
      orow["total"] = fmt_sig6(oev.mean_total);
      orow["calibration_mse"] = "";
      art.rows.push_back(std::move(orow));
      atomic_write(fs::path(cfg.out_dir) / "predictions_ood.csv",
                   regression_dump_to_csv(oev.dump, trailer));
    }
  } else {
    detail::ClassificationEval ev = detail::eval_classification(cfg, params, spec, test);
    art.calibration = classification_calibration(ev.probs, ev.labels, cfg.bins);
    std::vector<double> correctness(test.n());
    for (std::size_t i = 0; i < correctness.size(); ++i)
      correctness[i] = ev.dump.pred_class[i] == ev.labels[i] ? 1.0 : 0.0;
    art.pr = precision_recall_uncertainty(ev.dump.entropy, correctness, cfg.percentiles,
                                          PRValue::accuracy);
    auto row = common_cells("in_distribution");
    row["accuracy"] = fmt_sig6(ev.accuracy);
    row["iou"] = fmt_sig6(ev.iou);
    row["entropy"] = fmt_sig6(ev.mean_entropy);
    row["aleatoric_entropy"] = fmt_sig6(ev.aleatoric_entropy);
    row["epistemic_logit_var"] = fmt_sig6(ev.epistemic_logit_var);
    row["calibration_mse"] = fmt_sig6(calibration_mse(art.calibration));
    art.rows.push_back(std::move(row));
    pred_csv = classification_dump_to_csv(ev.dump, trailer);
    if (cfg.ood) {
      Dataset ood = build_ood_dataset(cfg);
      detail::ClassificationEval oev = detail::eval_classification(cfg, params, spec, ood);
      auto orow = common_cells("ood");
      orow["accuracy"] = fmt_sig6(oev.accuracy);
      orow["iou"] = fmt_sig6(oev.iou);
      orow["entropy"] = fmt_sig6(oev.mean_entropy);
      orow["aleatoric_entropy"] = fmt_sig6(oev.aleatoric_entropy);
      orow["epistemic_logit_var"] = fmt_sig6(oev.epistemic_logit_var);
      orow["calibration_mse"] = "";
      art.rows.push_back(std::move(orow));
      atomic_write(fs::path(cfg.out_dir) / "predictions_ood.csv",
                   classification_dump_to_csv(oev.dump, trailer));
    }
  }
  timer.lap("inference");

  fs::path dir(cfg.out_dir);
  atomic_write(dir / "config_snapshot.json", snapshot);
  atomic_write(dir / "metrics.csv",
               emit_table({art}, metric_columns(cfg.task)) + trailer + "\n");
  atomic_write(dir / "predictions.csv", pred_csv);
  atomic_write(dir / "calibration.csv", calibration_to_csv(art.calibration, trailer));
  atomic_write(dir / "pr.csv", pr_to_csv(art.pr, trailer));
  emit_plot(art.calibration, dir / "calibration.svg", trailer);
  if (!art.pr.recall.empty()) emit_plot(art.pr, dir / "pr.svg", trailer);
  save_checkpoint(params, (dir / "checkpoint.txt").string());
  if (cfg.write_datasets) {
    atomic_write(dir / "dataset_train.csv", dataset_to_csv(train, trailer));
    atomic_write(dir / "dataset_test.csv", dataset_to_csv(test, trailer));
  }
  timer.lap("write");
  atomic_write(dir / "timings.csv", timer.to_csv());
  return art;
}

/// Re-derive the run's own invariants from its written artifacts.
/// Throws self_check_error on any violation.
inline void self_check(const RunArtifact& art) {
  namespace fs = std::filesystem;
  std::string pred = read_file(art.out_dir / "predictions.csv");
  if (art.task == Task::regression) {
    RegressionDump d = regression_dump_from_csv(pred);
    for (std::size_t i = 0; i < d.y_true.size(); ++i) {
      if (d.total_var[i] != d.epistemic_var[i] + d.aleatoric_var[i])
        throw self_check_error("self-check: total_var != epistemic_var + aleatoric_var at row " +
                               std::to_string(i));
      if (d.epistemic_var[i] < 0.0 || d.aleatoric_var[i] < 0.0)
        throw self_check_error("self-check: negative variance at row " + std::to_string(i));
    }
  } else {
    ClassificationDump d = classification_dump_from_csv(pred);
    std::size_t C = d.probs.size();
    double logC = std::log(static_cast<double>(C));
    for (std::size_t i = 0; i < d.label.size(); ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < C; ++c) sum += d.probs[c][i];
      if (std::abs(sum - 1.0) > 1e-9)
        throw self_check_error("self-check: probabilities sum to " + std::to_string(sum) +
                               " at row " + std::to_string(i));
      if (d.entropy[i] < -1e-12 || d.entropy[i] > logC + 1e-9)
        throw self_check_error("self-check: entropy out of [0, log C] at row " + std::to_string(i));
      if (d.logit_var[i] < 0.0)
        throw self_check_error("self-check: negative logit variance at row " + std::to_string(i));
    }
  }
  CalibrationCurve cal = calibration_from_csv(read_file(art.out_dir / "calibration.csv"));
  for (std::size_t i = 0; i < cal.grid.size(); ++i) {
    if (cal.observed[i] < 0.0 || cal.observed[i] > 1.0)
      throw self_check_error("self-check: calibration frequency out of [0,1]");
    if (i > 0 && !(cal.grid[i] > cal.grid[i - 1]))
      throw self_check_error("self-check: calibration grid not increasing");
  }
  PRCurve pr = pr_from_csv(read_file(art.out_dir / "pr.csv"));
  for (std::size_t i = 1; i < pr.recall.size(); ++i) {
    if (!(pr.recall[i] > pr.recall[i - 1]))
      throw self_check_error("self-check: recall levels not increasing");
    if (pr.n_retained[i] < pr.n_retained[i - 1])
      throw self_check_error("self-check: retained sets not nested");
  }
}

}  // namespace alea

#endif  // ALEA_EXPERIMENT_HPP
