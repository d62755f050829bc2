#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "alea/synthdata.hpp"

using namespace alea;

TEST_CASE("regression generator: determinism and stored noise scale") {
  Dataset a = gen_hetero_regression(500, 11);
  Dataset b = gen_hetero_regression(500, 11);
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
  CHECK(*a.sigma_true == *b.sigma_true);
  Dataset c = gen_hetero_regression(500, 12);
  CHECK_FALSE(a.inputs == c.inputs);

  RegressionDataConfig cfg;
  for (std::size_t i = 0; i < a.n(); ++i) {
    double x = a.inputs.at(i, 0);
    CHECK(x >= -1.0);
    CHECK(x <= 1.0);
    CHECK((*a.sigma_true).at(i, 0) == cfg.sigma_star(x));
  }
  CHECK(a.provenance.generator == "hetero_regression");
  CHECK(a.provenance.seed == 11);
}

TEST_CASE("regression generator: noiseless config is exact") {
  RegressionDataConfig cfg;
  cfg.sigma_base = 0.0;
  cfg.sigma_slope = 0.0;
  Dataset ds = gen_hetero_regression(200, 3, cfg);
  for (std::size_t i = 0; i < ds.n(); ++i)
    CHECK(ds.targets.at(i, 0) == cfg.f_star(ds.inputs.at(i, 0)));
}

TEST_CASE("regression generator: residual spread near zero matches sigma_base") {
  Dataset ds = gen_hetero_regression(100000, 21);
  RegressionDataConfig cfg;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    double x = ds.inputs.at(i, 0);
    if (std::abs(x) > 0.02) continue;
    double r = ds.targets.at(i, 0) - cfg.f_star(x);
    acc += r * r;
    ++count;
  }
  REQUIRE(count > 500);
  double sd = std::sqrt(acc / static_cast<double>(count));
  CHECK(std::abs(sd - 0.05) / 0.05 < 0.2);
}

TEST_CASE("regression generator: config validation") {
  RegressionDataConfig bad;
  bad.x_low = 1.0;
  bad.x_high = -1.0;
  CHECK_THROWS_AS(gen_hetero_regression(10, 1, bad), std::invalid_argument);
  RegressionDataConfig neg;
  neg.sigma_base = -0.1;
  CHECK_THROWS_AS(gen_hetero_regression(10, 1, neg), std::invalid_argument);
  CHECK_THROWS_AS(gen_hetero_regression(0, 1), std::invalid_argument);
}

TEST_CASE("classification generator: determinism and clean labels") {
  ClassificationDataConfig cfg;
  cfg.cluster_std = 0.1;
  Dataset a = gen_toy_classification(1000, 5, cfg);
  Dataset b = gen_toy_classification(1000, 5, cfg);
  CHECK(a.inputs == b.inputs);
  CHECK(a.labels == b.labels);

  // rho = 0 by default: every point sits near the mean of its own label
  auto means = cfg.means();
  for (std::size_t i = 0; i < a.n(); ++i) {
    auto [mx, my] = means[static_cast<std::size_t>(a.labels[i])];
    CHECK(std::hypot(a.inputs.at(i, 0) - mx, a.inputs.at(i, 1) - my) < 8.0 * cfg.cluster_std);
    CHECK((*a.sigma_true).at(i, 0) == 0.0);
  }
}

TEST_CASE("classification generator: constant flip probability one flips everything") {
  ClassificationDataConfig cfg;
  cfg.classes = 2;
  cfg.cluster_std = 0.05;
  cfg.rho_const = 1.0;
  Dataset ds = gen_toy_classification(400, 9, cfg);
  auto means = cfg.means();
  for (std::size_t i = 0; i < ds.n(); ++i) {
    // the label is never the generating (nearest) cluster
    double d0 = std::hypot(ds.inputs.at(i, 0) - means[0].first, ds.inputs.at(i, 1) - means[0].second);
    double d1 = std::hypot(ds.inputs.at(i, 0) - means[1].first, ds.inputs.at(i, 1) - means[1].second);
    int nearest = d0 < d1 ? 0 : 1;
    CHECK(ds.labels[i] == 1 - nearest);
    CHECK((*ds.sigma_true).at(i, 0) == 1.0);
  }
}

TEST_CASE("classification generator: boundary-concentrated flips") {
  ClassificationDataConfig cfg;
  cfg.rho_max = 0.5;
  // midpoint between two adjacent means has zero margin: rho = rho_max
  auto means = cfg.means();
  double mid_x = 0.5 * (means[0].first + means[1].first);
  double mid_y = 0.5 * (means[0].second + means[1].second);
  CHECK(cfg.rho_at(mid_x, mid_y) == Catch::Approx(0.5).epsilon(1e-12));
  // at a cluster mean the margin is large: rho tiny
  CHECK(cfg.rho_at(means[0].first, means[0].second) < 0.01);
  CHECK_THROWS_AS(gen_toy_classification(2, 1, ClassificationDataConfig{1}), std::invalid_argument);
}

TEST_CASE("corrupt_labels: exact counts and recorded rows") {
  Dataset ds = gen_hetero_regression(1000, 31);
  Dataset c = corrupt_labels(ds, 0.2, 7);
  CHECK(c.corrupted.size() == 200);
  CHECK(std::is_sorted(c.corrupted.begin(), c.corrupted.end()));
  CHECK(std::adjacent_find(c.corrupted.begin(), c.corrupted.end()) == c.corrupted.end());

  double lo = ds.targets[0], hi = ds.targets[0];
  for (double v : ds.targets.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::set<std::size_t> hit(c.corrupted.begin(), c.corrupted.end());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (hit.count(i)) {
      CHECK(c.targets.at(i, 0) >= lo);
      CHECK(c.targets.at(i, 0) <= hi);
    } else {
      CHECK(c.targets.at(i, 0) == ds.targets.at(i, 0));
    }
  }
  CHECK(c.inputs == ds.inputs);

  Dataset none = corrupt_labels(ds, 0.0, 7);
  CHECK(none.corrupted.empty());
  CHECK(none.targets == ds.targets);

  Dataset again = corrupt_labels(ds, 0.2, 7);
  CHECK(again.targets == c.targets);
  CHECK_THROWS_AS(corrupt_labels(ds, 1.5, 7), std::invalid_argument);
}

TEST_CASE("corrupt_labels: classification full corruption flips every binary label") {
  ClassificationDataConfig cfg;
  cfg.classes = 2;
  Dataset ds = gen_toy_classification(300, 13, cfg);
  Dataset c = corrupt_labels(ds, 1.0, 3);
  REQUIRE(c.corrupted.size() == 300);
  for (std::size_t i = 0; i < ds.n(); ++i) CHECK(c.labels[i] == 1 - ds.labels[i]);
}

TEST_CASE("subset: identity, counts, and nesting") {
  Dataset ds = gen_hetero_regression(800, 41);
  Dataset full = subset(ds, 1.0, 5);
  CHECK(full.inputs == ds.inputs);
  CHECK(full.targets == ds.targets);

  Dataset half = subset(ds, 0.5, 5);
  Dataset quarter = subset(ds, 0.25, 5);
  CHECK(half.n() == 400);
  CHECK(quarter.n() == 200);

  // nested: every quarter-row appears among the half-rows
  std::set<double> half_x;
  for (std::size_t i = 0; i < half.n(); ++i) half_x.insert(half.inputs.at(i, 0));
  for (std::size_t i = 0; i < quarter.n(); ++i) CHECK(half_x.count(quarter.inputs.at(i, 0)) == 1);

  // rows keep their original relative order
  std::set<double> orig;
  for (std::size_t i = 0; i < ds.n(); ++i) orig.insert(ds.inputs.at(i, 0));
  REQUIRE(orig.size() == ds.n());  // all distinct, so order checks are meaningful
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < quarter.n(); ++i) {
    for (std::size_t j = 0; j < ds.n(); ++j)
      if (ds.inputs.at(j, 0) == quarter.inputs.at(i, 0)) {
        positions.push_back(j);
        break;
      }
  }
  CHECK(std::is_sorted(positions.begin(), positions.end()));
  CHECK_THROWS_AS(subset(ds, 0.0, 5), std::invalid_argument);
}

TEST_CASE("subset: corrupted flags follow their rows") {
  Dataset ds;
  ds.task = Task::regression;
  ds.inputs = Tensor({4, 1}, {0.0, 1.0, 2.0, 3.0});
  ds.targets = Tensor({4, 1}, {10.0, 11.0, 12.0, 13.0});
  ds.corrupted = {1, 3};

  Dataset full = subset(ds, 1.0, 2);
  CHECK(full.corrupted == std::vector<std::size_t>{1, 3});

  Dataset half = subset(ds, 0.5, 2);
  for (std::size_t r = 0; r < half.n(); ++r) {
    auto orig = static_cast<std::size_t>(half.inputs.at(r, 0));  // input value encodes the row
    bool was = orig == 1 || orig == 3;
    bool flagged = std::binary_search(half.corrupted.begin(), half.corrupted.end(), r);
    CHECK(was == flagged);
  }
}

TEST_CASE("ood shift regression lands outside the training range") {
  RegressionDataConfig cfg;
  Dataset ood = ood_shift_regression(300, 17, cfg, 1.0);
  for (std::size_t i = 0; i < ood.n(); ++i) {
    double x = ood.inputs.at(i, 0);
    CHECK(x >= 2.0);
    CHECK(x <= 3.0);
  }
  CHECK(ood.provenance.generator == "hetero_regression_ood");
  CHECK_THROWS_AS(ood_shift_regression(10, 17, cfg, 0.0), std::invalid_argument);
}

TEST_CASE("ood shift classification translates means and warns on overlap") {
  ClassificationDataConfig cfg;
  Dataset far = ood_shift_classification(200, 19, cfg, 10.0);
  CHECK_FALSE(far.provenance.ood_overlap_warning);
  ClassificationDataConfig shifted = cfg;
  shifted.mean_shift = 10.0;
  auto means = shifted.means();
  for (std::size_t i = 0; i < far.n(); ++i) {
    double best = 1e300;
    for (auto& [mx, my] : means)
      best = std::min(best, std::hypot(far.inputs.at(i, 0) - mx, far.inputs.at(i, 1) - my));
    CHECK(best < 8.0 * cfg.cluster_std);
  }

  Dataset near_ds = ood_shift_classification(200, 19, cfg, 0.1);
  CHECK(near_ds.provenance.ood_overlap_warning);
}

TEST_CASE("dataset csv round trips") {
  Dataset ds = gen_hetero_regression(50, 23);
  Dataset c = corrupt_labels(ds, 0.1, 3);
  std::string text = dataset_to_csv(c, "# config_hash=abc");
  Dataset back = dataset_from_csv(text, Task::regression);
  CHECK(back.inputs == c.inputs);
  CHECK(back.targets == c.targets);
  CHECK(*back.sigma_true == *c.sigma_true);
  CHECK(back.corrupted == c.corrupted);

  ClassificationDataConfig ccfg;
  ccfg.rho_max = 0.3;
  Dataset cls = gen_toy_classification(60, 29, ccfg);
  Dataset cls_back = dataset_from_csv(dataset_to_csv(cls), Task::classification);
  CHECK(cls_back.inputs == cls.inputs);
  CHECK(cls_back.labels == cls.labels);
  CHECK(*cls_back.sigma_true == *cls.sigma_true);

  CHECK_THROWS_AS(dataset_from_csv("a,b\n1,2\n", Task::regression), std::invalid_argument);
  CHECK_THROWS_AS(dataset_from_csv("x0,y\n", Task::regression), std::invalid_argument);
}
