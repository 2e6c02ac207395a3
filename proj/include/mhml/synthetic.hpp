// Gaussian-mixture benchmark with a closed-form Bayes posterior. Class
// means sit equally spaced on a circle in the first two coordinates;
// samples are mean + sigma * standard normal, labels drawn from the prior.
// The posterior P(y=k|x) ~ prior_k * exp(-||x - mu_k||^2 / (2 sigma^2)) is
// the calibration ground truth.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhml/matrix.hpp"
#include "mhml/nn.hpp"
#include "mhml/rng.hpp"

namespace mhml::bench {

// Default sizes put the backbone in the overparameterized regime where
// single-head baselines come out visibly overconfident; the val split is
// 20% of train, mirroring the temperature-fitting holdout convention.
struct SyntheticSpec {
  std::size_t k = 8;
  std::size_t dim = 8;
  double radius = 2.0;
  double sigma = 1.2;
  std::vector<double> priors;  // empty = geometric 0.8^k, normalized
  std::size_t n_train = 4000;
  std::size_t n_val = 800;
  std::size_t n_test = 10000;
  std::uint64_t seed = 1;
};

inline std::vector<double> geometric_priors(std::size_t k, double ratio = 0.8) {
  std::vector<double> p(k);
  double v = 1.0, sum = 0.0;
  for (std::size_t i = 0; i < k; ++i, v *= ratio) {
    p[i] = v;
    sum += v;
  }
  for (double& x : p) x /= sum;
  return p;
}

inline std::vector<double> uniform_priors(std::size_t k) {
  return std::vector<double>(k, 1.0 / static_cast<double>(k));
}

inline std::vector<double> resolved_priors(const SyntheticSpec& spec) {
  return spec.priors.empty() ? geometric_priors(spec.k) : spec.priors;
}

inline void validate(const SyntheticSpec& spec) {
  if (spec.k < 2) throw std::invalid_argument("synthetic spec: K >= 2 required");
  if (spec.dim < 2) throw std::invalid_argument("synthetic spec: dim >= 2 required");
  if (!(spec.sigma > 0.0)) throw std::invalid_argument("synthetic spec: sigma > 0 required");
  const std::vector<double> priors = resolved_priors(spec);
  if (priors.size() != spec.k) throw std::invalid_argument("synthetic spec: priors size != K");
  double sum = 0.0;
  for (double p : priors) {
    if (p < 0.0) throw std::invalid_argument("synthetic spec: negative prior");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("synthetic spec: priors must sum to 1");
}

inline std::vector<double> class_mean(const SyntheticSpec& spec, std::size_t k) {
  std::vector<double> mu(spec.dim, 0.0);
  const double angle = 6.283185307179586476925286766559 * static_cast<double>(k) /
                       static_cast<double>(spec.k);
  mu[0] = spec.radius * std::cos(angle);
  mu[1] = spec.radius * std::sin(angle);
  return mu;
}

struct Dataset {
  Matrix x;
  std::vector<int> y;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  SyntheticSpec spec;

  std::size_t total() const { return n_train + n_val + n_test; }

  Matrix slice_x(std::size_t begin, std::size_t count) const {
    Matrix out(count, x.cols);
    std::copy_n(x.data.begin() + begin * x.cols, count * x.cols, out.data.begin());
    return out;
  }
  std::span<const int> slice_y(std::size_t begin, std::size_t count) const {
    return {y.data() + begin, count};
  }

  Matrix train_x() const { return slice_x(0, n_train); }
  std::span<const int> train_y() const { return slice_y(0, n_train); }
  Matrix val_x() const { return slice_x(n_train, n_val); }
  std::span<const int> val_y() const { return slice_y(n_train, n_val); }
  Matrix test_x() const { return slice_x(n_train + n_val, n_test); }
  std::span<const int> test_y() const { return slice_y(n_train + n_val, n_test); }
};

inline Dataset gen_gaussian_mixture(const SyntheticSpec& spec) {
  validate(spec);
  const std::vector<double> priors = resolved_priors(spec);
  std::vector<double> cdf(spec.k);
  std::partial_sum(priors.begin(), priors.end(), cdf.begin());
  std::vector<std::vector<double>> means;
  for (std::size_t c = 0; c < spec.k; ++c) means.push_back(class_mean(spec, c));

  Dataset ds;
  ds.spec = spec;
  ds.n_train = spec.n_train;
  ds.n_val = spec.n_val;
  ds.n_test = spec.n_test;
  const std::size_t n = ds.total();
  ds.x = Matrix(n, spec.dim);
  ds.y.resize(n);
  Rng rng(spec.seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t label = 0;
    while (label + 1 < spec.k && u >= cdf[label]) ++label;
    ds.y[i] = static_cast<int>(label);
    auto row = ds.x.row(i);
    for (std::size_t d = 0; d < spec.dim; ++d) {
      row[d] = means[label][d] + spec.sigma * rng.normal();
    }
  }
  return ds;
}

inline std::vector<double> bayes_posterior(const SyntheticSpec& spec, std::span<const double> x) {
  if (x.size() != spec.dim) throw std::invalid_argument("bayes_posterior: dimension mismatch");
  const std::vector<double> priors = resolved_priors(spec);
  std::vector<double> score(spec.k);  // log prior - ||x - mu||^2 / (2 sigma^2)
  for (std::size_t c = 0; c < spec.k; ++c) {
    const std::vector<double> mu = class_mean(spec, c);
    double d2 = 0.0;
    for (std::size_t d = 0; d < spec.dim; ++d) {
      const double diff = x[d] - mu[d];
      d2 += diff * diff;
    }
    score[c] = std::log(std::max(priors[c], 1e-300)) - d2 / (2.0 * spec.sigma * spec.sigma);
  }
  return softmax(score);
}

inline Matrix bayes_posterior_batch(const SyntheticSpec& spec, const Matrix& x) {
  Matrix p(x.rows, spec.k);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const std::vector<double> row = bayes_posterior(spec, x.row(i));
    std::copy(row.begin(), row.end(), p.row(i).begin());
  }
  return p;
}

// --- CSV interchange -------------------------------------------------------
// Dataset rows: f0,...,f{d-1},label. Prediction rows: p0,...,p{K-1},label.
// Floats are written with 9 significant digits.

namespace detail {

inline void write_csv(const Matrix& values, std::span<const int> labels, const std::string& prefix,
                      const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  for (std::size_t j = 0; j < values.cols; ++j) f << prefix << j << ',';
  f << "label\n";
  char buf[40];
  for (std::size_t i = 0; i < values.rows; ++i) {
    auto row = values.row(i);
    for (std::size_t j = 0; j < values.cols; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", row[j]);
      f << buf << ',';
    }
    f << labels[i] << '\n';
  }
}

inline std::pair<Matrix, std::vector<int>> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty csv file: " + path);
  const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 2) throw std::runtime_error("csv needs at least one value column and a label: " + path);
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::size_t got = 0;
    double last = 0.0;
    while (std::getline(ss, field, ',')) {
      const double v = std::strtod(field.c_str(), nullptr);
      if (got + 1 < cols) values.push_back(v);
      last = v;
      ++got;
    }
    if (got != cols) throw std::runtime_error("ragged csv row in " + path);
    labels.push_back(static_cast<int>(last));
    ++rows;
  }
  Matrix m(rows, cols - 1);
  m.data = std::move(values);
  return {std::move(m), std::move(labels)};
}

}  // namespace detail

inline void write_dataset_csv(const Dataset& ds, const std::string& path) {
  detail::write_csv(ds.x, ds.y, "f", path);
}

// Rows are ordered train, then val, then test; the counts recover the
// split boundaries.
inline Dataset read_dataset_csv(const std::string& path, std::size_t n_train, std::size_t n_val,
                                std::size_t n_test) {
  auto [x, y] = detail::read_csv(path);
  if (x.rows != n_train + n_val + n_test) {
    throw std::runtime_error("csv row count " + std::to_string(x.rows) + " does not match splits " +
                             std::to_string(n_train + n_val + n_test) + " in " + path);
  }
  Dataset ds;
  ds.x = std::move(x);
  ds.y = std::move(y);
  ds.n_train = n_train;
  ds.n_val = n_val;
  ds.n_test = n_test;
  ds.spec.dim = ds.x.cols;
  std::size_t max_label = 0;
  for (int label : ds.y) {
    if (label < 0) throw std::runtime_error("negative label in " + path);
    max_label = std::max(max_label, static_cast<std::size_t>(label));
  }
  ds.spec.k = max_label + 1;
  return ds;
}

inline void write_predictions_csv(const Matrix& probs, std::span<const int> labels,
                                  const std::string& path) {
  detail::write_csv(probs, labels, "p", path);
}

inline std::pair<Matrix, std::vector<int>> read_predictions_csv(const std::string& path) {
  return detail::read_csv(path);
}

// Labeled feature rows without split bookkeeping, for scoring a model on
// an arbitrary file.
inline std::pair<Matrix, std::vector<int>> read_feature_csv(const std::string& path) {
  return detail::read_csv(path);
}

}  // namespace mhml::bench
