#include "catch_amalgamated.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "alea/experiment.hpp"

using namespace alea;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace fs = std::filesystem;

namespace {

nlohmann::json minimal_json(const std::string& task, const std::string& variant,
                            const std::string& out_dir) {
  nlohmann::json j;
  j["task"] = task;
  j["variant"] = variant;
  j["training.seed"] = 11;
  j["data.seed"] = 22;
  j["data.test_seed"] = 33;
  j["inference.seed"] = 44;
  j["output.dir"] = out_dir;
  return j;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == '\n') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

RunArtifact fake_regression_artifact(const std::string& hash) {
  RunArtifact a;
  a.task = Task::regression;
  std::map<std::string, std::string> row;
  for (const std::string& c : metric_columns(Task::regression)) row[c] = "1";
  row["variant"] = "baseline";
  row["test_set"] = "in_distribution";
  row["config_hash"] = hash;
  a.rows.push_back(row);
  a.config_hash = hash;
  return a;
}

}  // namespace

TEST_CASE("config parsing fills defaults from minimal input") {
  ExperimentConfig cfg = parse_experiment_config(minimal_json("regression", "baseline", "/tmp/alea_min").dump());
  CHECK(cfg.task == Task::regression);
  CHECK(cfg.variant == Variant::baseline);
  CHECK(cfg.hidden == std::vector<std::size_t>{64, 64});
  CHECK(cfg.dropout_p == 0.2);
  CHECK(cfg.s_bias_init == -2.0);
  CHECK_FALSE(cfg.input_dropout);
  CHECK(cfg.epochs == 50);
  CHECK(cfg.max_steps == 0);
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.lr == 1e-3);
  CHECK(cfg.weight_decay == 1.0);
  CHECK(cfg.noise_T == 10);
  CHECK(cfg.train_seed == 11);
  CHECK(cfg.family == Likelihood::gaussian);
  CHECK(cfg.generator == "hetero_regression");
  CHECK(cfg.n == 1000);
  CHECK(cfg.data_seed == 22);
  CHECK(cfg.corrupt_fraction == 0.0);
  CHECK(cfg.subset_fraction == 1.0);
  CHECK_FALSE(cfg.ood);
  CHECK(cfg.test_n == 1000);
  CHECK(cfg.test_seed == 33);
  CHECK(cfg.test_clean);
  CHECK(cfg.T == 50);
  CHECK(cfg.infer_seed == 44);
  CHECK(cfg.infer_noise_T == 100);
  CHECK(cfg.bins == 10);
  CHECK(cfg.percentiles.size() == 10);
  CHECK(cfg.calibration_grid.size() == 9);
  CHECK(cfg.out_dir == "/tmp/alea_min");
  CHECK_FALSE(cfg.write_datasets);

  ExperimentConfig ccfg =
      parse_experiment_config(minimal_json("classification", "combined", "/tmp/alea_min").dump());
  CHECK(ccfg.generator == "toy_classification");
  CHECK(ccfg.loss_kind() == LossKind::stochastic_softmax);
  CHECK(cfg.loss_kind() == LossKind::fixed_gaussian);
}

TEST_CASE("config parsing maps variants to heads and losses") {
  auto cfg_for = [](const std::string& task, const std::string& variant) {
    return parse_experiment_config(minimal_json(task, variant, "/tmp/x").dump());
  };
  CHECK(cfg_for("regression", "aleatoric").loss_kind() == LossKind::hetero_gaussian);
  CHECK(cfg_for("regression", "epistemic").loss_kind() == LossKind::fixed_gaussian);
  CHECK(cfg_for("classification", "baseline").loss_kind() == LossKind::softmax);
  CHECK(cfg_for("classification", "aleatoric").loss_kind() == LossKind::stochastic_softmax);

  nlohmann::json j = minimal_json("regression", "combined", "/tmp/x");
  j["regression.family"] = "laplace";
  CHECK(parse_experiment_config(j.dump()).loss_kind() == LossKind::hetero_laplace);

  NetworkSpec spec = cfg_for("regression", "combined").network_spec(1, 1);
  CHECK(spec.head == Head::regression_hetero);
  CHECK(spec.layer_widths == std::vector<std::size_t>{1, 64, 64});
  CHECK(cfg_for("classification", "epistemic").network_spec(2, 4).head == Head::classification_plain);
}

TEST_CASE("config parsing rejects unknown and malformed keys") {
  nlohmann::json j = minimal_json("regression", "baseline", "/tmp/x");
  j["data.bogus_knob"] = 3;
  CHECK_THROWS_WITH(parse_experiment_config(j.dump()), ContainsSubstring("data.bogus_knob"));

  CHECK_THROWS_AS(parse_experiment_config("not json at all"), std::invalid_argument);
  CHECK_THROWS_AS(parse_experiment_config("[1,2,3]"), std::invalid_argument);

  nlohmann::json bad_type = minimal_json("regression", "baseline", "/tmp/x");
  bad_type["training.lr"] = "fast";
  CHECK_THROWS_WITH(parse_experiment_config(bad_type.dump()), ContainsSubstring("training.lr"));

  nlohmann::json bad_hidden = minimal_json("regression", "baseline", "/tmp/x");
  bad_hidden["network.hidden"] = nlohmann::json::array({16, 0});
  CHECK_THROWS_WITH(parse_experiment_config(bad_hidden.dump()), ContainsSubstring("network.hidden"));

  nlohmann::json bad_task = minimal_json("segmentation", "baseline", "/tmp/x");
  CHECK_THROWS_WITH(parse_experiment_config(bad_task.dump()), ContainsSubstring("task"));
  nlohmann::json bad_variant = minimal_json("regression", "fancy", "/tmp/x");
  CHECK_THROWS_WITH(parse_experiment_config(bad_variant.dump()), ContainsSubstring("variant"));
}

TEST_CASE("config parsing names missing required keys") {
  const char* required[] = {"task",      "variant",        "training.seed", "data.seed",
                            "data.test_seed", "inference.seed", "output.dir"};
  for (const char* key : required) {
    nlohmann::json j = minimal_json("regression", "baseline", "/tmp/x");
    j.erase(key);
    CHECK_THROWS_WITH(parse_experiment_config(j.dump()), ContainsSubstring(key));
  }
}

TEST_CASE("config parsing enforces conditional seeds") {
  nlohmann::json j = minimal_json("regression", "baseline", "/tmp/x");
  j["data.corrupt_fraction"] = 0.25;
  CHECK_THROWS_WITH(parse_experiment_config(j.dump()), ContainsSubstring("data.corrupt_seed"));
  j["data.corrupt_seed"] = 5;
  CHECK(parse_experiment_config(j.dump()).corrupt_fraction == 0.25);

  nlohmann::json s = minimal_json("regression", "baseline", "/tmp/x");
  s["data.subset_fraction"] = 0.5;
  CHECK_THROWS_WITH(parse_experiment_config(s.dump()), ContainsSubstring("data.subset_seed"));
  s["data.subset_seed"] = 6;
  CHECK(parse_experiment_config(s.dump()).subset_fraction == 0.5);

  nlohmann::json o = minimal_json("regression", "baseline", "/tmp/x");
  o["data.ood"] = true;
  CHECK_THROWS_WITH(parse_experiment_config(o.dump()), ContainsSubstring("data.ood_seed"));
  o["data.ood_seed"] = 7;
  CHECK(parse_experiment_config(o.dump()).ood);

  // inactive seeds are tolerated so sweeps can share one config skeleton
  nlohmann::json inert = minimal_json("regression", "baseline", "/tmp/x");
  inert["data.corrupt_seed"] = 5;
  inert["data.subset_seed"] = 6;
  inert["data.ood_seed"] = 7;
  CHECK_NOTHROW(parse_experiment_config(inert.dump()));
}

TEST_CASE("config validation enforces variant constraints") {
  nlohmann::json e = minimal_json("regression", "epistemic", "/tmp/x");
  e["network.dropout_p"] = 0.0;
  CHECK_THROWS_WITH(parse_experiment_config(e.dump()), ContainsSubstring("dropout_p"));
  // baseline never samples masks, so p=0 is fine there
  nlohmann::json b = minimal_json("regression", "baseline", "/tmp/x");
  b["network.dropout_p"] = 0.0;
  CHECK_NOTHROW(parse_experiment_config(b.dump()));

  nlohmann::json t = minimal_json("classification", "combined", "/tmp/x");
  t["inference.T"] = 1;
  CHECK_THROWS_WITH(parse_experiment_config(t.dump()), ContainsSubstring("inference.T"));

  nlohmann::json g = minimal_json("classification", "baseline", "/tmp/x");
  g["data.generator"] = "hetero_regression";
  CHECK_THROWS_WITH(parse_experiment_config(g.dump()), ContainsSubstring("data.generator"));

  nlohmann::json d = minimal_json("regression", "baseline", "");
  CHECK_THROWS_WITH(parse_experiment_config(d.dump()), ContainsSubstring("output.dir"));
}

TEST_CASE("resolved config json is canonical and seed-sensitive") {
  std::string text = minimal_json("regression", "baseline", "/tmp/x").dump();
  ExperimentConfig cfg = parse_experiment_config(text);
  std::string a = resolved_config_json(cfg);
  std::string b = resolved_config_json(parse_experiment_config(text));
  CHECK(a == b);
  REQUIRE_FALSE(a.empty());
  CHECK(a.back() == '\n');
  CHECK_THAT(a, ContainsSubstring("\"task\""));
  CHECK_THAT(a, ContainsSubstring("\"training.seed\""));
  // inactive conditional knobs stay out of the snapshot
  CHECK(a.find("data.corrupt_seed") == std::string::npos);
  CHECK(a.find("data.ood_seed") == std::string::npos);

  nlohmann::json corrupt_on = minimal_json("regression", "baseline", "/tmp/x");
  corrupt_on["data.corrupt_fraction"] = 0.1;
  corrupt_on["data.corrupt_seed"] = 9;
  std::string with_corrupt = resolved_config_json(parse_experiment_config(corrupt_on.dump()));
  CHECK_THAT(with_corrupt, ContainsSubstring("data.corrupt_seed"));

  nlohmann::json other = minimal_json("regression", "baseline", "/tmp/x");
  other["data.seed"] = 23;
  std::string c = resolved_config_json(parse_experiment_config(other.dump()));
  CHECK(a != c);
  CHECK(hex64(fnv1a(a)) != hex64(fnv1a(c)));
}

TEST_CASE("emit_table formats rows and validates columns") {
  RunArtifact a = fake_regression_artifact("deadbeef00000000");
  std::string table = emit_table({a}, metric_columns(Task::regression));
  std::vector<std::string> lines = lines_of(table);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] ==
        "variant,train_fraction,test_set,n_train,rms,nll,epistemic,aleatoric,total,"
        "calibration_mse,config_hash");
  CHECK_THAT(lines[1], ContainsSubstring("baseline"));
  CHECK_THAT(lines[1], ContainsSubstring("deadbeef00000000"));

  RunArtifact broken = a;
  broken.rows[0].erase("rms");
  CHECK_THROWS_WITH(emit_table({broken}, metric_columns(Task::regression)),
                    ContainsSubstring("rms"));

  RunArtifact cls;
  cls.task = Task::classification;
  CHECK_THROWS_AS(emit_table({a, cls}, metric_columns(Task::regression)), std::invalid_argument);
  CHECK_THROWS_AS(emit_table({}, metric_columns(Task::regression)), std::invalid_argument);
}

TEST_CASE("svg plots are deterministic and shaped by curve kind") {
  CalibrationCurve cal;
  cal.grid = {0.1, 0.5, 0.9};
  cal.observed = {0.18, 0.47, 0.85};
  cal.counts = {10, 40, 12};
  std::string svg1 = render_plot(cal, "# config_hash=abc123");
  std::string svg2 = render_plot(cal, "# config_hash=abc123");
  CHECK(svg1 == svg2);
  CHECK_THAT(svg1, ContainsSubstring("<svg"));
  CHECK_THAT(svg1, ContainsSubstring("stroke-dasharray"));  // reliability diagonal
  CHECK_THAT(svg1, ContainsSubstring("abc123"));

  PRCurve pr;
  pr.recall = {0.5, 1.0};
  pr.value = {0.2, 0.4};
  pr.n_retained = {50, 100};
  std::string psvg = render_plot(pr, "");
  CHECK_THAT(psvg, ContainsSubstring("<svg"));
  CHECK(psvg.find("stroke-dasharray") == std::string::npos);

  CHECK_THROWS_AS(render_plot(CalibrationCurve{}, ""), std::invalid_argument);
  CHECK_THROWS_AS(render_plot(PRCurve{}, ""), std::invalid_argument);
}

TEST_CASE("train_network descends and honors step caps") {
  RegressionDataConfig dcfg;
  Dataset data = gen_hetero_regression(64, 515, dcfg);

  NetworkSpec spec;
  spec.layer_widths = {1, 16};
  spec.output_dim = 1;
  spec.head = Head::regression_plain;
  spec.dropout_p = 0.1;

  TrainConfig tc;
  tc.epochs = 10;
  tc.batch_size = 16;
  tc.opt.lr = 0.01;
  tc.loss = LossKind::fixed_gaussian;
  tc.fixed_sigma = 1.0;
  tc.seed = 99;

  Parameters params = init_network(spec, 99);
  TrainResult res = train_network(params, spec, data, tc);
  CHECK(res.steps == 40);  // 4 batches x 10 epochs
  REQUIRE(res.epoch_objective.size() == 10);
  CHECK(std::isfinite(res.final_objective));
  CHECK(res.epoch_objective.back() < res.epoch_objective.front());

  // same inputs, same trajectory
  Parameters again = init_network(spec, 99);
  TrainResult res2 = train_network(again, spec, data, tc);
  CHECK(res2.final_objective == res.final_objective);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    CHECK(params.layers[l].W == again.layers[l].W);
    CHECK(params.layers[l].b == again.layers[l].b);
  }

  TrainConfig capped = tc;
  capped.max_steps = 5;
  Parameters fresh = init_network(spec, 99);
  TrainResult res3 = train_network(fresh, spec, data, capped);
  CHECK(res3.steps == 5);
}

TEST_CASE("run_experiment writes a complete deterministic artifact set") {
  fs::path dir = fresh_dir("alea_exp_reg");
  nlohmann::json j = minimal_json("regression", "combined", dir.string());
  j["network.hidden"] = nlohmann::json::array({8});
  j["training.seed"] = 7;
  j["training.epochs"] = 2;
  j["training.batch_size"] = 16;
  j["data.seed"] = 101;
  j["data.n"] = 48;
  j["data.test_n"] = 32;
  j["data.test_seed"] = 202;
  j["data.subset_fraction"] = 0.5;
  j["data.subset_seed"] = 303;
  j["inference.seed"] = 404;
  j["inference.T"] = 6;

  ExperimentConfig cfg = parse_experiment_config(j.dump());
  RunArtifact art = run_experiment(cfg);

  for (const char* name : {"config_snapshot.json", "metrics.csv", "predictions.csv",
                           "calibration.csv", "pr.csv", "calibration.svg", "pr.svg",
                           "checkpoint.txt", "timings.csv"})
    CHECK(fs::exists(dir / name));
  CHECK_FALSE(fs::exists(dir / "predictions_ood.csv"));
  CHECK_FALSE(fs::exists(dir / "dataset_train.csv"));

  REQUIRE(art.rows.size() == 1);
  CHECK(art.rows[0].at("test_set") == "in_distribution");
  CHECK(art.rows[0].at("n_train") == "24");  // half of 48
  CHECK(art.rows[0].at("train_fraction") == "0.5");
  CHECK(art.rows[0].at("variant") == "combined");

  std::string snapshot = read_file(dir / "config_snapshot.json");
  CHECK(hex64(fnv1a(snapshot)) == art.config_hash);

  std::string metrics = read_file(dir / "metrics.csv");
  std::vector<std::string> lines = lines_of(metrics);
  REQUIRE(lines.size() == 3);  // header, one row, hash trailer
  CHECK(lines[0] == "variant,train_fraction,test_set,n_train,rms,nll,epistemic,aleatoric,total,calibration_mse,config_hash");
  CHECK(lines[2] == "# config_hash=" + art.config_hash);

  CHECK_THAT(read_file(dir / "calibration.svg"), ContainsSubstring(art.config_hash));
  CHECK_NOTHROW(self_check(art));

  // rerunning the identical config reproduces metrics.csv byte for byte
  RunArtifact art2 = run_experiment(cfg);
  CHECK(art2.config_hash == art.config_hash);
  CHECK(read_file(dir / "metrics.csv") == metrics);
  CHECK(read_file(dir / "predictions.csv") == read_file(dir / "predictions.csv"));
}

TEST_CASE("run_experiment classification with ood emits ood artifacts") {
  fs::path dir = fresh_dir("alea_exp_cls");
  nlohmann::json j = minimal_json("classification", "aleatoric", dir.string());
  j["network.hidden"] = nlohmann::json::array({8});
  j["training.seed"] = 9;
  j["training.epochs"] = 2;
  j["training.noise_T"] = 3;
  j["data.seed"] = 111;
  j["data.test_seed"] = 222;
  j["data.classes"] = 3;
  j["data.n"] = 60;
  j["data.test_n"] = 30;
  j["data.rho_max"] = 0.3;
  j["data.corrupt_fraction"] = 0.1;
  j["data.corrupt_seed"] = 333;
  j["data.ood"] = true;
  j["data.ood_seed"] = 444;
  j["data.ood_shift"] = 6.0;
  j["inference.seed"] = 555;
  j["inference.noise_T"] = 40;
  j["output.datasets"] = true;

  ExperimentConfig cfg = parse_experiment_config(j.dump());
  RunArtifact art = run_experiment(cfg);

  for (const char* name : {"metrics.csv", "predictions.csv", "predictions_ood.csv",
                           "dataset_train.csv", "dataset_test.csv", "calibration.svg"})
    CHECK(fs::exists(dir / name));

  REQUIRE(art.rows.size() == 2);
  CHECK(art.rows[0].at("test_set") == "in_distribution");
  CHECK(art.rows[1].at("test_set") == "ood");
  CHECK(art.rows[1].at("calibration_mse").empty());  // no nominal coverage off-distribution
  CHECK(art.rows[0].at("n_train") == "60");

  std::vector<std::string> lines = lines_of(read_file(dir / "metrics.csv"));
  REQUIRE(lines.size() == 4);  // header, two rows, trailer
  std::vector<std::string> ood_cells = split_csv_line(lines[2]);
  REQUIRE(ood_cells.size() == 11);
  CHECK(ood_cells[2] == "ood");
  CHECK(ood_cells[9].empty());
  CHECK(ood_cells[10] == art.config_hash);

  // the corrupted training dump marks exactly 10% of rows
  std::vector<std::string> train_lines = lines_of(read_file(dir / "dataset_train.csv"));
  REQUIRE_FALSE(train_lines.empty());
  CHECK_THAT(train_lines[0], ContainsSubstring("corrupted"));
  std::size_t flagged = 0;
  for (std::size_t i = 1; i < train_lines.size(); ++i) {
    if (train_lines[i].empty() || train_lines[i][0] == '#') continue;
    std::vector<std::string> cells = split_csv_line(train_lines[i]);
    if (cells.back() == "1") ++flagged;
  }
  CHECK(flagged == 6);

  CHECK_NOTHROW(self_check(art));
}
