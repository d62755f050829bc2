#include "catch_amalgamated.hpp"

#include <cmath>
#include <filesystem>

#include "alea/network.hpp"
#include "alea/rng.hpp"

using namespace alea;

namespace {
NetworkSpec small_spec(Head head, double p = 0.2) {
  NetworkSpec s;
  s.layer_widths = {2, 8};
  s.output_dim = head_is_regression(head) ? 1 : 3;
  s.dropout_p = p;
  s.head = head;
  return s;
}
}  // namespace

TEST_CASE("spec validation") {
  NetworkSpec s;
  s.layer_widths = {3};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.layer_widths = {3, 4};
  s.dropout_p = 1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.dropout_p = 0.5;
  s.head = Head::classification_plain;
  s.output_dim = 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.output_dim = 3;
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("init is deterministic") {
  NetworkSpec s = small_spec(Head::regression_hetero);
  Parameters a = init_network(s, 7);
  Parameters b = init_network(s, 7);
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].W == b.layers[l].W);
    CHECK(a.layers[l].b == b.layers[l].b);
  }
  Parameters c = init_network(s, 8);
  CHECK_FALSE(a.layers[0].W == c.layers[0].W);
}

TEST_CASE("bias init: zeros except the log-variance head") {
  NetworkSpec s = small_spec(Head::regression_hetero);
  Parameters p = init_network(s, 1);
  for (double v : p.layers[0].b.values()) CHECK(v == 0.0);
  CHECK(p.layers[1].b[0] == 0.0);   // prediction column
  CHECK(p.layers[1].b[1] == -2.0);  // log-variance column

  NetworkSpec plain = small_spec(Head::regression_plain);
  Parameters q = init_network(plain, 1);
  for (const Layer& l : q.layers)
    for (double v : l.b.values()) CHECK(v == 0.0);
}

TEST_CASE("weight variance matches the fan-in scheme") {
  NetworkSpec s;
  s.layer_widths = {256, 256};
  s.output_dim = 1;
  s.head = Head::regression_plain;
  Parameters p = init_network(s, 3);
  const Tensor& W = p.layers[0].W;
  double mean = 0.0;
  for (double w : W.values()) mean += w;
  mean /= static_cast<double>(W.size());
  double var = 0.0;
  for (double w : W.values()) var += (w - mean) * (w - mean);
  var /= static_cast<double>(W.size());
  double expected = 2.0 / 256.0;
  CHECK(std::abs(var - expected) / expected < 0.2);
}

TEST_CASE("masks are reproducible binary tensors") {
  NetworkSpec s;
  s.layer_widths = {4, 16, 16};
  s.output_dim = 1;
  s.dropout_p = 0.4;
  s.head = Head::regression_plain;
  DropoutMask a = sample_mask(s, 11, 3);
  DropoutMask b = sample_mask(s, 11, 3);
  REQUIRE(a.keep.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(a.keep[l] == b.keep[l]);
    for (double v : a.keep[l].values()) CHECK((v == 0.0 || v == 1.0));
  }
  // input layer kept whole unless input_dropout is on
  for (double v : a.keep[0].values()) CHECK(v == 1.0);
  s.input_dropout = true;
  DropoutMask c = sample_mask(s, 11, 3);
  double dropped = 0.0;
  for (double v : c.keep[0].values()) dropped += 1.0 - v;
  CHECK(dropped >= 0.0);  // binary either way
  DropoutMask d = sample_mask(s, 11, 4);
  bool any_diff = false;
  for (std::size_t l = 1; l < 3; ++l)
    if (!(a.keep[l] == d.keep[l])) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("p=0 masked equals unmasked") {
  NetworkSpec s = small_spec(Head::regression_plain, 0.0);
  Parameters p = init_network(s, 2);
  Tensor x({3, 2}, {0.1, -0.4, 1.0, 0.2, -0.7, 0.3});
  DropoutMask m = sample_mask(s, 5, 0);
  HeadOutput with = forward_eval(p, s, x, &m);
  HeadOutput without = forward_eval(p, s, x, nullptr);
  CHECK(with.pred == without.pred);
}

TEST_CASE("zero weights force the constructed head output") {
  NetworkSpec s = small_spec(Head::regression_hetero);
  Parameters p = init_network(s, 2);
  for (Layer& l : p.layers)
    for (double& w : l.W.values()) w = 0.0;
  Tensor x({2, 2}, {5.0, -3.0, 0.0, 1.0});
  HeadOutput h = forward_eval(p, s, x, nullptr);
  for (double v : h.pred.values()) CHECK(v == 0.0);
  REQUIRE(h.s.has_value());
  for (double v : h.s->values()) CHECK(v == -2.0);
}

TEST_CASE("different mask indices give different stochastic outputs") {
  NetworkSpec s = small_spec(Head::regression_plain, 0.5);
  Parameters p = init_network(s, 9);
  Tensor x({1, 2}, {0.8, -0.3});
  int distinct = 0;
  HeadOutput base = forward_eval(p, s, x, nullptr);
  for (std::uint64_t t = 0; t < 50; ++t) {
    DropoutMask m = sample_mask(s, 13, t);
    HeadOutput h = forward_eval(p, s, x, &m);
    if (!(h.pred == base.pred)) ++distinct;
  }
  CHECK(distinct > 25);
}

TEST_CASE("inverted dropout expectation consistency on a linear map") {
  // large positive hidden biases + small weights keep every hidden unit in
  // the relu's positive region for every realizable mask, so the whole
  // masked map is linear and its mask average must converge to the MAP pass
  NetworkSpec s;
  s.layer_widths = {3, 6};
  s.output_dim = 2;
  s.dropout_p = 0.3;
  s.head = Head::regression_plain;
  s.input_dropout = true;
  Parameters p = init_network(s, 21);
  RngStream wrng = RngStream::derive(88, {1});
  for (double& v : p.layers[0].W.values()) v = wrng.uniform(-1.0, 1.0);
  for (double& v : p.layers[0].b.values()) v = 10.0;

  Tensor x({1, 3}, {0.7, -1.1, 0.4});
  HeadOutput map = forward_eval(p, s, x, nullptr);

  const int T = 10000;
  std::vector<double> mean(2, 0.0), m2(2, 0.0);
  for (int t = 0; t < T; ++t) {
    DropoutMask m = sample_mask(s, 77, static_cast<std::uint64_t>(t));
    HeadOutput h = forward_eval(p, s, x, &m);
    for (std::size_t j = 0; j < 2; ++j) {
      double v = h.pred.at(0, j);
      double delta = v - mean[j];
      mean[j] += delta / (t + 1);
      m2[j] += delta * (v - mean[j]);
    }
  }
  for (std::size_t j = 0; j < 2; ++j) {
    double se = std::sqrt(m2[j] / (T - 1) / T);
    CHECK(std::abs(mean[j] - map.pred.at(0, j)) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("forward rejects bad input width and non-finite activations") {
  NetworkSpec s = small_spec(Head::regression_plain);
  Parameters p = init_network(s, 2);
  Tensor bad({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(forward_eval(p, s, bad, nullptr), std::invalid_argument);
  p.layers[0].W[0] = std::numeric_limits<double>::infinity();
  Tensor x({1, 2}, {1.0, 1.0});
  CHECK_THROWS_WITH(forward_eval(p, s, x, nullptr), Catch::Matchers::ContainsSubstring("layer 0"));
}

TEST_CASE("weight decay term") {
  NetworkSpec s = small_spec(Head::regression_plain);
  Parameters p = init_network(s, 2);
  for (Layer& l : p.layers)
    for (double& w : l.W.values()) w = 0.0;
  CHECK(weight_decay_term(p, 0.2, 10) == 0.0);

  // single weight 2.0, p=0.5, N=1 -> 0.25 * 4 = 1
  p.layers[0].W[0] = 2.0;
  CHECK(weight_decay_term(p, 0.5, 1) == Catch::Approx(1.0));
  // p -> 1 sends the term to zero
  CHECK(weight_decay_term(p, 1.0 - 1e-12, 1) == Catch::Approx(0.0).margin(1e-11));
  // biases excluded
  p.layers[0].b[0] = 100.0;
  CHECK(weight_decay_term(p, 0.5, 1) == Catch::Approx(1.0));
  CHECK_THROWS_AS(weight_decay_term(p, 0.5, 0), std::invalid_argument);
}

TEST_CASE("graph and eval forwards agree") {
  NetworkSpec s = small_spec(Head::regression_hetero, 0.3);
  Parameters p = init_network(s, 4);
  Tensor x({4, 2}, {0.1, 0.9, -0.5, 0.2, 0.3, -0.3, 1.0, 1.0});
  DropoutMask m = sample_mask(s, 3, 12);

  Graph g;
  ParamNodes ids = add_parameters(g, p);
  HeadNodes hn = forward_graph(g, ids, s, g.input(x), &m);
  HeadOutput he = forward_eval(p, s, x, &m);
  const Tensor& gp = g.out(hn.pred);
  for (std::size_t i = 0; i < gp.size(); ++i)
    CHECK(gp[i] == Catch::Approx(he.pred[i]).epsilon(1e-14));
  const Tensor& gs = g.out(hn.s);
  for (std::size_t i = 0; i < gs.size(); ++i)
    CHECK(gs[i] == Catch::Approx((*he.s)[i]).epsilon(1e-14));
}

TEST_CASE("checkpoint round trip is exact") {
  NetworkSpec s = small_spec(Head::regression_hetero);
  Parameters p = init_network(s, 99);
  std::string text = checkpoint_to_string(p);
  Parameters q = checkpoint_from_string(text);
  REQUIRE(q.layers.size() == p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    CHECK(p.layers[l].W == q.layers[l].W);
    CHECK(p.layers[l].b == q.layers[l].b);
  }
  CHECK_THROWS_AS(checkpoint_from_string("bogus 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(checkpoint_from_string("alea-checkpoint 2\nlayers 0\n"), std::invalid_argument);
}

TEST_CASE("checkpoint file io") {
  namespace fs = std::filesystem;
  NetworkSpec s = small_spec(Head::regression_plain);
  Parameters p = init_network(s, 5);
  fs::path path = fs::temp_directory_path() / "alea_ckpt_test.txt";
  save_checkpoint(p, path.string());
  Parameters q = load_checkpoint(path.string());
  for (std::size_t l = 0; l < p.layers.size(); ++l) CHECK(p.layers[l].W == q.layers[l].W);
  fs::remove(path);
}
