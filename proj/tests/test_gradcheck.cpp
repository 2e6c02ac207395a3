#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mhml/gradcheck.hpp"

using namespace mhml;
using namespace mhml::gradcheck;

TEST_CASE("finite_diff on simple functions") {
  const auto square = [](std::span<const double> x) { return x[0] * x[0]; };
  const auto g = finite_diff(square, std::vector<double>{3.0}, 1e-5);
  CHECK(g[0] == Catch::Approx(6.0).margin(1e-9));

  const auto constant = [](std::span<const double>) { return 4.2; };
  for (double v : finite_diff(constant, std::vector<double>{1.0, -2.0, 0.5}, 1e-5)) {
    CHECK(std::abs(v) <= 1e-9);
  }
}

TEST_CASE("finite_diff rejects bad eps and non-finite functions") {
  const auto f = [](std::span<const double> x) { return x[0]; };
  CHECK_THROWS_AS(finite_diff(f, std::vector<double>{1.0}, 0.0), std::invalid_argument);
  const auto bad = [](std::span<const double> x) { return std::log(x[0]); };
  CHECK_THROWS_AS(finite_diff(bad, std::vector<double>{0.0}, 1e-5), std::runtime_error);
}

TEST_CASE("finite_diff recovers the softmax cross-entropy gradient") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = 2 + rng.below(5);
    std::vector<double> z(k);
    for (double& v : z) v = rng.uniform(-3.0, 3.0);
    const int y = static_cast<int>(rng.below(k));
    const auto loss = [&](std::span<const double> logits) {
      return cross_entropy(softmax(logits), y);
    };
    const auto numeric = finite_diff(loss, z, 1e-5);
    const auto p = softmax(z);
    for (std::size_t j = 0; j < k; ++j) {
      const double analytic = p[j] - (static_cast<int>(j) == y ? 1.0 : 0.0);
      CHECK(relative_error(analytic, numeric[j]) <= 1e-6);
    }
  }
}

TEST_CASE("central differences converge at second order on the quartic") {
  Rng rng(42);
  std::vector<double> x(6);
  for (double& v : x) v = rng.uniform(0.5, 2.0);
  const std::vector<double> exact = quartic_grad(x);
  const auto max_err = [&](double eps) {
    const auto est = finite_diff(quartic, x, eps);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(est[i] - exact[i]));
    return worst;
  };
  const double coarse = max_err(1e-2);
  const double fine = max_err(5e-3);
  CHECK(coarse >= 3.0 * fine);
}

TEST_CASE("verify_property1: zero failures, M=1 reduction, tied heads") {
  const GradCheckReport report = verify_property1(30, 1e-6);
  CHECK(report.ok());
  CHECK(report.trials == 30);
  CHECK(report.max_rel_err <= 1e-6);

  // M=1 reduction: gradient of CE(p_mean) at the only head is p - onehot.
  Rng rng(43);
  Matrix z(1, 4);
  for (double& v : z.data) v = rng.uniform(-3.0, 3.0);
  const HeadOutputs out = outputs_from_logits({z}, Averaging::prob_average);
  const auto g = mh_grad_logits(out, std::vector<int>{2}, zero_weight_scheme(4, 1));
  for (std::size_t j = 0; j < 4; ++j) {
    const double expected = out.p_heads[0](0, j) - (j == 2 ? 1.0 : 0.0);
    CHECK(relative_error(g[0](0, j), expected) <= 1e-12);
  }

  // Identical heads: per-head numeric gradients agree with each other.
  const HeadOutputs tied = outputs_from_logits({z, z}, Averaging::prob_average);
  const auto tg = mh_grad_logits(tied, std::vector<int>{2}, zero_weight_scheme(4, 2));
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(std::abs(tg[0](0, j) - tg[1](0, j)) <= 1e-9);
  }
}

TEST_CASE("verify_property2: zero failures and weight degeneracies") {
  const GradCheckReport report = verify_property2(30, 1e-6);
  CHECK(report.ok());
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("verify_symmetry: tied-head identities hold") {
  const GradCheckReport report = verify_symmetry(30);
  CHECK(report.ok());

  // Worked case: omega_y 2 vs 1/2, p = [0.8, 0.2], y = 0 gives L1 gap
  // 1.5 * 0.4 = 0.6.
  Matrix z(1, 2);
  z(0, 0) = std::log(0.8);
  z(0, 1) = std::log(0.2);
  const HeadOutputs out = outputs_from_logits({z, z}, Averaging::prob_average);
  const WeightScheme scheme = weight_scheme_from_assignment(2, 2, 2.0, 0.5, {0, 1});
  const auto g = mh_grad_logits(out, std::vector<int>{0}, scheme);
  double l1 = 0.0;
  for (std::size_t j = 0; j < 2; ++j) l1 += std::abs(g[0](0, j) - g[1](0, j));
  CHECK(l1 == Catch::Approx(0.6).margin(1e-9));
}

TEST_CASE("harnesses are deterministic given seed and trial count") {
  const GradCheckReport a = verify_property2(12, 1e-6);
  const GradCheckReport b = verify_property2(12, 1e-6);
  CHECK(a.max_rel_err == b.max_rel_err);
  CHECK(a.max_abs_err == b.max_abs_err);
  CHECK(a.failures.size() == b.failures.size());
}

TEST_CASE("corrupted analytic gradients are caught and reported") {
  HarnessOptions opt;
  opt.corruption = 1e-2;
  const GradCheckReport p1 = verify_property1(10, 1e-6, opt);
  CHECK_FALSE(p1.ok());
  CHECK(p1.failures.front().coordinate == 0);
  CHECK_FALSE(verify_property2(10, 1e-6, opt).ok());
  CHECK_FALSE(verify_symmetry(10, opt).ok());
}

TEST_CASE("harnesses require at least one trial") {
  CHECK_THROWS_AS(verify_property1(0, 1e-6), std::invalid_argument);
  CHECK_THROWS_AS(verify_property2(0, 1e-6), std::invalid_argument);
  CHECK_THROWS_AS(verify_symmetry(0), std::invalid_argument);
}
