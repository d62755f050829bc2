// Command-line experiment runner.
//
//   alea run <config.json> [--self-check]
//   alea sweep <config-dir> [--self-check]
//   alea eval <prediction-dump.csv> [--family gaussian|laplace] [--bins N] [--out DIR]
//   alea plot <curve.csv> [--out FILE]
//
// Exit codes: 0 success, 1 config error, 2 numerical failure,
// 3 self-check violation.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "alea/eval.hpp"
#include "alea/experiment.hpp"
#include "alea/io_util.hpp"
#include "alea/predict.hpp"
#include "alea/tensor.hpp"

namespace fs = std::filesystem;

namespace {

int run_one(const std::string& config_path, bool with_self_check, alea::RunArtifact* out) {
  alea::ExperimentConfig cfg = alea::parse_experiment_config(alea::read_file(config_path));
  alea::RunArtifact art = alea::run_experiment(cfg);
  if (with_self_check) alea::self_check(art);
  std::cout << "run " << config_path << " -> " << art.out_dir.string() << " (config_hash="
            << art.config_hash << ")\n";
  if (out) *out = std::move(art);
  return 0;
}

int cmd_run(const std::string& config_path, bool with_self_check) {
  return run_one(config_path, with_self_check, nullptr);
}

int cmd_sweep(const std::string& dir, bool with_self_check) {
  std::vector<fs::path> configs;
  if (!fs::is_directory(dir)) throw std::invalid_argument("sweep: not a directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      configs.push_back(entry.path());
  std::sort(configs.begin(), configs.end());
  if (configs.empty()) throw std::invalid_argument("sweep: no .json configs in " + dir);
  std::vector<alea::RunArtifact> regression, classification;
  for (const fs::path& p : configs) {
    alea::RunArtifact art;
    run_one(p.string(), with_self_check, &art);
    (art.task == alea::Task::regression ? regression : classification).push_back(std::move(art));
  }
  if (!regression.empty())
    alea::atomic_write(fs::path(dir) / "sweep_metrics_regression.csv",
                       alea::emit_table(regression, alea::metric_columns(alea::Task::regression)));
  if (!classification.empty())
    alea::atomic_write(fs::path(dir) / "sweep_metrics_classification.csv",
                       alea::emit_table(classification, alea::metric_columns(alea::Task::classification)));
  std::cout << "sweep complete: " << configs.size() << " runs\n";
  return 0;
}

int cmd_eval(const std::string& dump_path, const std::string& family, std::size_t bins,
             std::string out_dir) {
  std::string text = alea::read_file(dump_path);
  if (out_dir.empty()) out_dir = fs::path(dump_path).parent_path().string();
  if (out_dir.empty()) out_dir = ".";
  std::string first_line = text.substr(0, text.find('\n'));
  bool regression = first_line.rfind("index,y_true", 0) == 0;

  std::vector<double> grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> percentiles = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  alea::CalibrationCurve cal;
  alea::PRCurve pr;
  std::ostringstream report;
  if (regression) {
    alea::RegressionDump d = alea::regression_dump_from_csv(text);
    alea::Likelihood fam =
        family == "laplace" ? alea::Likelihood::laplace : alea::Likelihood::gaussian;
    cal = alea::regression_calibration(d.pred_mean, d.total_var, d.y_true, fam, grid);
    std::vector<double> errors(d.y_true.size());
    double se = 0.0;
    for (std::size_t i = 0; i < errors.size(); ++i) {
      errors[i] = d.y_true[i] - d.pred_mean[i];
      se += errors[i] * errors[i];
    }
    pr = alea::precision_recall_uncertainty(d.total_var, errors, percentiles, alea::PRValue::rmse);
    report << "metric,value\n";
    report << "rms," << alea::fmt_sig6(std::sqrt(se / static_cast<double>(errors.size()))) << "\n";
    report << "calibration_mse," << alea::fmt_sig6(alea::calibration_mse(cal)) << "\n";
  } else {
    alea::ClassificationDump d = alea::classification_dump_from_csv(text);
    std::size_t n = d.label.size(), C = d.probs.size();
    alea::Tensor probs = alea::Tensor::zeros({n, C});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c) probs.at(i, c) = d.probs[c][i];
    cal = alea::classification_calibration(probs, d.label, bins);
    std::vector<double> correctness(n);
    for (std::size_t i = 0; i < n; ++i) correctness[i] = d.pred_class[i] == d.label[i] ? 1.0 : 0.0;
    pr = alea::precision_recall_uncertainty(d.entropy, correctness, percentiles,
                                            alea::PRValue::accuracy);
    alea::ClassificationMetrics m = alea::classification_metrics(d.pred_class, d.label, C);
    report << "metric,value\n";
    report << "accuracy," << alea::fmt_sig6(m.accuracy) << "\n";
    report << "iou," << alea::fmt_sig6(m.mean_iou) << "\n";
    report << "calibration_mse," << alea::fmt_sig6(alea::calibration_mse(cal)) << "\n";
  }
  std::string stem = fs::path(dump_path).stem().string();
  alea::atomic_write(fs::path(out_dir) / (stem + "_calibration.csv"), alea::calibration_to_csv(cal));
  alea::atomic_write(fs::path(out_dir) / (stem + "_pr.csv"), alea::pr_to_csv(pr));
  alea::atomic_write(fs::path(out_dir) / (stem + "_eval.csv"), report.str());
  std::cout << report.str();
  return 0;
}

int cmd_plot(const std::string& csv_path, std::string out_path) {
  std::string text = alea::read_file(csv_path);
  std::string first_line = text.substr(0, text.find('\n'));
  if (out_path.empty()) out_path = fs::path(csv_path).replace_extension(".svg").string();
  std::string svg;
  if (first_line.rfind("nominal,", 0) == 0)
    svg = alea::render_plot(alea::calibration_from_csv(text));
  else if (first_line.rfind("recall,", 0) == 0)
    svg = alea::render_plot(alea::pr_from_csv(text));
  else
    throw std::invalid_argument("plot: unrecognized curve header '" + first_line + "'");
  alea::atomic_write(out_path, svg);
  std::cout << "plot " << csv_path << " -> " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty experiment toolkit"};
  app.require_subcommand(1);

  std::string run_config;
  bool run_self_check = false;
  CLI::App* run = app.add_subcommand("run", "train and evaluate one experiment config");
  run->add_option("config", run_config, "JSON config file")->required();
  run->add_flag("--self-check", run_self_check, "re-verify artifact invariants after the run");

  std::string sweep_dir;
  bool sweep_self_check = false;
  CLI::App* sweep = app.add_subcommand("sweep", "run every .json config in a directory");
  sweep->add_option("dir", sweep_dir, "config directory")->required();
  sweep->add_flag("--self-check", sweep_self_check, "re-verify artifact invariants after each run");

  std::string eval_dump, eval_family = "gaussian", eval_out;
  std::size_t eval_bins = 10;
  CLI::App* evalc = app.add_subcommand("eval", "evaluate a prediction dump");
  evalc->add_option("dump", eval_dump, "prediction dump CSV")->required();
  evalc->add_option("--family", eval_family, "gaussian|laplace (regression calibration)")
      ->check(CLI::IsMember({"gaussian", "laplace"}));
  evalc->add_option("--bins", eval_bins, "calibration bins (classification)");
  evalc->add_option("--out", eval_out, "output directory (default: alongside the dump)");

  std::string plot_csv, plot_out;
  CLI::App* plot = app.add_subcommand("plot", "render a curve CSV as SVG");
  plot->add_option("curve", plot_csv, "calibration or pr curve CSV")->required();
  plot->add_option("--out", plot_out, "output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(run_config, run_self_check);
    if (sweep->parsed()) return cmd_sweep(sweep_dir, sweep_self_check);
    if (evalc->parsed()) return cmd_eval(eval_dump, eval_family, eval_bins, eval_out);
    if (plot->parsed()) return cmd_plot(plot_csv, plot_out);
  } catch (const alea::self_check_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const alea::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
