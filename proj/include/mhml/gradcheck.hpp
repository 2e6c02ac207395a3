// Brute-force gradient oracle: central finite differences over logits and
// parameters, plus randomized harnesses for the two analytic gradient
// properties and the tied-head symmetry identity.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhml/multihead.hpp"

namespace mhml::gradcheck {

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences, O(eps^2). Aborts with diagnostics on non-finite
// function values.
inline std::vector<double> finite_diff(const ScalarFn& fn, std::span<const double> point,
                                       double eps = 1e-5) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff: eps must be positive");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double f_plus = fn(x);
    x[i] = saved - eps;
    const double f_minus = fn(x);
    x[i] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      throw std::runtime_error("finite_diff: non-finite function value at coordinate " +
                               std::to_string(i));
    }
    grad[i] = (f_plus - f_minus) / (2.0 * eps);
  }
  return grad;
}

// Relative error with a floor so near-zero gradients do not blow up the
// denominator.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({1e-8, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

struct Failure {
  std::uint64_t trial_seed = 0;
  std::size_t coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::size_t trials = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::vector<Failure> failures;

  bool ok() const { return failures.empty(); }
};

struct HarnessOptions {
  std::uint64_t master_seed = 20240901;
  double eps = 1e-5;
  // Test hook: added to every analytic gradient's first coordinate so the
  // failure path can be exercised on demand.
  double corruption = 0.0;
};

// Built-in quartic used by the eps-convergence test: f(x) = sum x_i^4.
inline double quartic(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v * v * v;
  return s;
}

inline std::vector<double> quartic_grad(std::span<const double> x) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = 4.0 * x[i] * x[i] * x[i];
  return g;
}

namespace detail {

struct Trial {
  std::size_t k = 0;
  std::size_t m = 0;
  std::vector<Matrix> logits;  // m of 1 x k
  int label = 0;
};

inline Trial random_trial(Rng& rng, std::size_t min_heads) {
  Trial t;
  t.k = 2 + rng.below(5);  // K in [2, 6]
  const std::size_t max_m = std::min<std::size_t>(4, t.k);
  t.m = min_heads + rng.below(max_m - min_heads + 1);
  for (std::size_t h = 0; h < t.m; ++h) {
    Matrix z(1, t.k);
    for (double& v : z.data) v = rng.uniform(-3.0, 3.0);
    t.logits.push_back(std::move(z));
  }
  t.label = static_cast<int>(rng.below(t.k));
  return t;
}

// Flattened mh_loss over all head logits, for the finite-difference side.
inline double loss_at(const Trial& t, const WeightScheme& scheme, std::span<const double> flat) {
  std::vector<Matrix> z(t.m, Matrix(1, t.k));
  for (std::size_t h = 0; h < t.m; ++h) {
    for (std::size_t j = 0; j < t.k; ++j) z[h](0, j) = flat[h * t.k + j];
  }
  const HeadOutputs out = outputs_from_logits(std::move(z), Averaging::prob_average);
  const int label = t.label;
  return mh_loss(out, std::span<const int>(&label, 1), scheme);
}

inline void check_trial(const Trial& t, const WeightScheme& scheme, std::uint64_t trial_seed,
                        double tol, const HarnessOptions& opt, GradCheckReport& report) {
  const HeadOutputs out = outputs_from_logits(t.logits, Averaging::prob_average);
  const int label = t.label;
  std::vector<Matrix> analytic = mh_grad_logits(out, std::span<const int>(&label, 1), scheme);
  analytic[0](0, 0) += opt.corruption;

  std::vector<double> flat(t.m * t.k);
  for (std::size_t h = 0; h < t.m; ++h) {
    for (std::size_t j = 0; j < t.k; ++j) flat[h * t.k + j] = t.logits[h](0, j);
  }
  const std::vector<double> numeric =
      finite_diff([&](std::span<const double> x) { return loss_at(t, scheme, x); }, flat, opt.eps);

  for (std::size_t h = 0; h < t.m; ++h) {
    for (std::size_t j = 0; j < t.k; ++j) {
      const std::size_t c = h * t.k + j;
      const double a = analytic[h](0, j);
      const double n = numeric[c];
      report.max_abs_err = std::max(report.max_abs_err, std::abs(a - n));
      const double rel = relative_error(a, n);
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (rel > tol) report.failures.push_back({trial_seed, c, a, n});
    }
  }
}

}  // namespace detail

// Property 1: with all head weights zeroed, only the averaged-CE term
// remains and the gradient at head m is (p_m[y]/sum_i p_i[y])(p_m - y).
inline GradCheckReport verify_property1(std::size_t trials, double tol, HarnessOptions opt = {}) {
  if (trials < 1) throw std::invalid_argument("verify_property1: trials >= 1 required");
  GradCheckReport report;
  report.trials = trials;
  for (std::size_t i = 0; i < trials; ++i) {
    const std::uint64_t trial_seed = derive_seed(opt.master_seed, i);
    Rng rng(trial_seed);
    const detail::Trial t = detail::random_trial(rng, 1);
    detail::check_trial(t, zero_weight_scheme(t.k, t.m), trial_seed, tol, opt, report);
  }
  return report;
}

// Property 2: full multi-head loss under random complementary weight
// schemes, factor (omega_m[y] + p_m[y]/sum_i p_i[y]).
inline GradCheckReport verify_property2(std::size_t trials, double tol, HarnessOptions opt = {}) {
  if (trials < 1) throw std::invalid_argument("verify_property2: trials >= 1 required");
  GradCheckReport report;
  report.trials = trials;
  for (std::size_t i = 0; i < trials; ++i) {
    const std::uint64_t trial_seed = derive_seed(opt.master_seed, 1'000'000 + i);
    Rng rng(trial_seed);
    const detail::Trial t = detail::random_trial(rng, 1);
    const double w_lo = rng.uniform(0.1, 1.0);
    const double w_hi = w_lo + rng.uniform(0.5, 3.0);
    detail::check_trial(t, build_weight_scheme(t.k, t.m, w_hi, w_lo, rng.bits()), trial_seed, tol,
                        opt, report);
  }
  return report;
}

// Tied-head identity at the level where it is exact: equal weights give
// identical gradients; with differing weights the L1 gap equals
// |delta omega_y| * ||p - onehot(y)||_1.
inline GradCheckReport verify_symmetry(std::size_t trials, HarnessOptions opt = {}) {
  if (trials < 1) throw std::invalid_argument("verify_symmetry: trials >= 1 required");
  constexpr double kEqualTol = 1e-12;
  constexpr double kGapTol = 1e-9;
  GradCheckReport report;
  report.trials = trials;
  for (std::size_t i = 0; i < trials; ++i) {
    const std::uint64_t trial_seed = derive_seed(opt.master_seed, 2'000'000 + i);
    Rng rng(trial_seed);
    detail::Trial t = detail::random_trial(rng, 2);
    for (std::size_t h = 1; h < t.m; ++h) t.logits[h] = t.logits[0];  // tie the heads
    const HeadOutputs out = outputs_from_logits(t.logits, Averaging::prob_average);
    const int label = t.label;
    const auto labels = std::span<const int>(&label, 1);
    const auto y = static_cast<std::size_t>(t.label);

    // (a) equal weights: gradients coincide.
    const double w = rng.uniform(0.2, 3.0);
    std::vector<Matrix> g_eq = mh_grad_logits(out, labels, uniform_weight_scheme(t.k, t.m, w));
    g_eq[0](0, 0) += opt.corruption;
    for (std::size_t h = 1; h < t.m; ++h) {
      double l1 = 0.0;
      for (std::size_t j = 0; j < t.k; ++j) l1 += std::abs(g_eq[h](0, j) - g_eq[0](0, j));
      report.max_abs_err = std::max(report.max_abs_err, l1);
      if (l1 > kEqualTol) report.failures.push_back({trial_seed, h, 0.0, l1});
    }

    // (b) differing weights: gap between the label's specializing head and
    // any other head is |w_hi - w_lo| * ||p - y||_1.
    const double w_lo = rng.uniform(0.1, 1.0);
    const double w_hi = w_lo + rng.uniform(0.5, 3.0);
    const WeightScheme scheme = build_weight_scheme(t.k, t.m, w_hi, w_lo, rng.bits());
    std::vector<Matrix> g = mh_grad_logits(out, labels, scheme);
    g[0](0, 0) += opt.corruption;
    double pnorm = 0.0;
    for (std::size_t j = 0; j < t.k; ++j) {
      pnorm += std::abs(out.p_heads[0](0, j) - (j == y ? 1.0 : 0.0));
    }
    const std::size_t spec = scheme.head_of_class[y];
    for (std::size_t h = 0; h < t.m; ++h) {
      if (h == spec) continue;
      double l1 = 0.0;
      for (std::size_t j = 0; j < t.k; ++j) l1 += std::abs(g[spec](0, j) - g[h](0, j));
      const double expected = (w_hi - w_lo) * pnorm;
      const double err = std::abs(l1 - expected);
      report.max_abs_err = std::max(report.max_abs_err, err);
      report.max_rel_err = std::max(report.max_rel_err, relative_error(expected, l1));
      if (err > kGapTol) report.failures.push_back({trial_seed, h, expected, l1});
    }
  }
  return report;
}

}  // namespace mhml::gradcheck
