#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mhml/posthoc.hpp"

using namespace mhml;
using namespace mhml::posthoc;

namespace {

Matrix random_logits(std::size_t n, std::size_t k, Rng& rng, double scale = 3.0) {
  Matrix z(n, k);
  for (double& v : z.data) v = rng.uniform(-scale, scale);
  return z;
}

// 1-D oracle: dense grid over log T, no refinement.
double grid_search_t(const Matrix& logits, std::span<const int> labels) {
  double best_t = 1.0, best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 6000; ++i) {
    const double t = std::exp(-3.0 + 6.0 * i / 6000.0);
    const double v = metrics::nll(apply_temperature(logits, {t}), labels);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace

TEST_CASE("apply_temperature identity and limits") {
  Rng rng(61);
  const Matrix z = random_logits(5, 4, rng);
  const Matrix p1 = apply_temperature(z, {1.0});
  const Matrix sm = softmax_rows(z);
  for (std::size_t i = 0; i < p1.data.size(); ++i) CHECK(p1.data[i] == sm.data[i]);

  Matrix two(1, 2);
  two(0, 0) = 2.0;
  const Matrix wide = apply_temperature(two, {1e6});
  CHECK(wide(0, 0) == Catch::Approx(0.5).margin(1e-5));
  CHECK(wide(0, 0) > wide(0, 1));  // argmax kept even near the uniform limit

  // z = [2, 0], T = 2: softmax([1, 0]) = [e/(e+1), 1/(e+1)].
  const Matrix half = apply_temperature(two, {2.0});
  CHECK(half(0, 0) == Catch::Approx(0.7310585786300049).margin(1e-12));
  CHECK(half(0, 1) == Catch::Approx(0.2689414213699951).margin(1e-12));
}

TEST_CASE("apply_temperature rejects non-positive T") {
  const Matrix z(1, 2);
  CHECK_THROWS_AS(apply_temperature(z, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(apply_temperature(z, {-1.0}), std::invalid_argument);
}

TEST_CASE("apply_temperature preserves the argmax for all T") {
  Rng rng(62);
  for (int trial = 0; trial < 40; ++trial) {
    const Matrix z = random_logits(6, 5, rng);
    const double t = std::exp(rng.uniform(-3.0, 3.0));
    const Matrix p = apply_temperature(z, {t});
    for (std::size_t i = 0; i < z.rows; ++i) {
      CHECK(argmax_lowest(p.row(i)) == argmax_lowest(z.row(i)));
    }
  }
}

TEST_CASE("fit_temperature finds T = 1 on matched logits") {
  // Rows [a, 0] with a = logit(q) and exactly fraction q of labels 0.
  const double q = 0.75;
  const double a = std::log(q / (1.0 - q));
  const std::size_t n = 100;
  Matrix z(n, 2);
  std::vector<int> y(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    z(i, 0) = a;
    if (i < 75) y[i] = 0;
  }
  const auto [t, trace] = fit_temperature(z, y);
  CHECK(t.value == Catch::Approx(1.0).margin(1e-3));
  CHECK(std::abs(t.value - grid_search_t(z, y)) <= 2e-3);
  CHECK(trace.chosen_t == t.value);
  for (const auto& [tt, v] : trace.evaluated) CHECK(v >= trace.final_nll);
}

TEST_CASE("fit_temperature: overconfident two-logit case") {
  // Every row [2, 0], 88% of labels 0: optimum 2 / ln(0.88/0.12).
  const std::size_t n = 100;
  Matrix z(n, 2);
  std::vector<int> y(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    z(i, 0) = 2.0;
    if (i < 88) y[i] = 0;
  }
  const auto [t, trace] = fit_temperature(z, y);
  CHECK(t.value == Catch::Approx(2.0 / std::log(0.88 / 0.12)).margin(1e-4));
  CHECK(t.value == Catch::Approx(1.0037992976837764).margin(1e-4));
}

TEST_CASE("fit_temperature scales with the logits") {
  // Labels drawn from softmax(z / 1.6) put the optimum near T = 1.6,
  // safely inside the search range before and after scaling.
  Rng rng(63);
  const std::size_t n = 500;
  const Matrix z = random_logits(n, 3, rng);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> zi(z.row(i).begin(), z.row(i).end());
    for (double& v : zi) v /= 1.6;
    const auto p = softmax(zi);
    const double u = rng.uniform();
    y[i] = u < p[0] ? 0 : (u < p[0] + p[1] ? 1 : 2);
  }
  const auto [t1, tr1] = fit_temperature(z, y);

  const double c = 2.5;
  Matrix scaled = z;
  for (double& v : scaled.data) v *= c;
  const auto [t2, tr2] = fit_temperature(scaled, y);
  CHECK(t2.value == Catch::Approx(c * t1.value).epsilon(1e-4));
}

TEST_CASE("fit_temperature never loses to T = 1 and records its minimum") {
  Rng rng(64);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 50;
    const Matrix z = random_logits(n, 4, rng);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(rng.below(4));
    const auto [t, trace] = fit_temperature(z, y);
    const double nll_t1 = metrics::nll(softmax_rows(z), y);
    CHECK(trace.final_nll <= nll_t1 + 1e-12);
    CHECK(metrics::nll(apply_temperature(z, t), y) == Catch::Approx(trace.final_nll).margin(1e-12));
    double recorded_min = std::numeric_limits<double>::infinity();
    for (const auto& [tt, v] : trace.evaluated) recorded_min = std::min(recorded_min, v);
    CHECK(trace.final_nll == recorded_min);
  }
}

TEST_CASE("fit_temperature rejects bad input") {
  CHECK_THROWS_AS(fit_temperature(Matrix(0, 2), std::vector<int>{}), std::invalid_argument);
  Matrix bad(1, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fit_temperature(bad, std::vector<int>{0}), std::invalid_argument);
}

TEST_CASE("ts_for_multihead: M=1 reduces to plain temperature scaling") {
  WeightScheme scheme = uniform_weight_scheme(3, 1, 1.0);
  MultiHeadModel model = make_multihead_model(4, {8}, 6, scheme, Averaging::logit_average, 71);
  Rng rng(72);
  Matrix x(120, 4);
  for (double& v : x.data) v = rng.uniform(-2.0, 2.0);
  std::vector<int> y(120);
  for (std::size_t i = 0; i < 120; ++i) y[i] = static_cast<int>(rng.below(3));

  const CalibratedMultihead cal = ts_for_multihead(model, x, y);
  const Matrix direct_logits = mean_logits(forward(model, mlp_forward(model.backbone, x).features()));
  const auto [t_direct, trace] = fit_temperature(direct_logits, y);
  CHECK(cal.temperature.value == t_direct.value);

  // Accuracy is untouched by scaling.
  const Matrix probs_pre = softmax_rows(cal.logits(x));
  const Matrix probs_post = cal.probs(x);
  CHECK(metrics::accuracy(probs_pre, y) == metrics::accuracy(probs_post, y));
}

TEST_CASE("ts_for_multihead rejects prob-average models") {
  WeightScheme scheme = uniform_weight_scheme(3, 2, 1.0);
  const MultiHeadModel model = make_multihead_model(4, {8}, 6, scheme, Averaging::prob_average, 73);
  const Matrix x(5, 4);
  CHECK_THROWS_WITH(ts_for_multihead(model, x, std::vector<int>{0, 1, 2, 0, 1}),
                    Catch::Matchers::ContainsSubstring("logit-average"));
}
