// Method roster, trainers and the experiment runner: single-head CE,
// label smoothing, deep ensembles and the multi-head multi-loss variants,
// all sharing one backbone so differences isolate the head/loss mechanism.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mhml/metrics.hpp"
#include "mhml/multihead.hpp"
#include "mhml/posthoc.hpp"
#include "mhml/synthetic.hpp"

namespace mhml::bench {

enum class MethodKind { sl1h, ls, dens, hsl2, hml2, hml4 };

inline std::string to_string(MethodKind k) {
  switch (k) {
    case MethodKind::sl1h: return "SL1H";
    case MethodKind::ls: return "LS";
    case MethodKind::dens: return "D-Ens";
    case MethodKind::hsl2: return "2HSL";
    case MethodKind::hml2: return "2HML";
    case MethodKind::hml4: return "4HML";
  }
  throw std::invalid_argument("bad method kind");
}

inline MethodKind method_kind_from_string(const std::string& s) {
  if (s == "SL1H") return MethodKind::sl1h;
  if (s == "LS") return MethodKind::ls;
  if (s == "D-Ens") return MethodKind::dens;
  if (s == "2HSL") return MethodKind::hsl2;
  if (s == "2HML") return MethodKind::hml2;
  if (s == "4HML") return MethodKind::hml4;
  throw std::invalid_argument("unknown method kind '" + s + "'");
}

inline std::size_t heads_for(MethodKind k) {
  switch (k) {
    case MethodKind::hsl2:
    case MethodKind::hml2: return 2;
    case MethodKind::hml4: return 4;
    default: return 1;
  }
}

inline bool has_multiloss_scheme(MethodKind k) {
  return k == MethodKind::hml2 || k == MethodKind::hml4;
}

struct MethodConfig {
  MethodKind kind = MethodKind::sl1h;
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  double lr = 1e-2;
  double momentum = 0.9;
  double ls_epsilon = 0.1;      // LS only
  std::size_t ensemble_size = 5;  // D-Ens only
  double w_hi = 0.0;            // 0 = default M (multi-loss kinds)
  double w_lo = 0.0;            // 0 = default 1/M
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t feature_dim = 64;
  std::uint64_t seed = 1;
};

namespace detail {

using LogitGradFn =
    std::function<std::vector<Matrix>(const HeadOutputs&, std::span<const int>)>;

// Seeded SGD epochs over shuffled mini-batches; the last short batch is
// averaged over its own size.
inline void train_loop(MultiHeadModel& model, const Matrix& x, std::span<const int> y,
                       const MethodConfig& cfg, std::uint64_t seed, const LogitGradFn& grad_fn) {
  OptimizerState opt_backbone = make_sgd_state(model.backbone.layers, cfg.lr, cfg.momentum);
  OptimizerState opt_heads = make_sgd_state(model.heads, cfg.lr, cfg.momentum);
  Rng shuffle_rng(derive_seed(seed, 13));
  std::vector<std::size_t> order(x.rows);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < x.rows; start += batch) {
      const std::size_t b = std::min(batch, x.rows - start);
      Matrix xb(b, x.cols);
      std::vector<int> yb(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = order[start + i];
        std::copy(x.row(src).begin(), x.row(src).end(), xb.row(i).begin());
        yb[i] = y[src];
      }
      const ForwardTrace trace = mlp_forward(model.backbone, xb);
      const HeadOutputs out = forward(model, trace.features());
      const ModelGrads grads = backward_from_logit_grads(model, trace, grad_fn(out, yb));
      sgd_step(model.backbone.layers, grads.backbone, opt_backbone);
      sgd_step(model.heads, grads.heads, opt_heads);
    }
  }
}

// Single-head CE with smoothed targets (1-eps) * onehot + eps/K;
// eps = 0 is plain cross-entropy.
inline std::vector<Matrix> smoothed_ce_grad(const HeadOutputs& out, std::span<const int> labels,
                                            double eps) {
  const std::size_t k = out.class_count();
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  Matrix g(out.batch_size(), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    auto p = out.p_heads[0].row(i);
    auto gi = g.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      const double target = eps / static_cast<double>(k) + (j == y ? 1.0 - eps : 0.0);
      gi[j] = (p[j] - target) * inv_b;
    }
  }
  return {std::move(g)};
}

}  // namespace detail

struct TrainedMethod {
  MethodConfig config;                // seed resolved
  std::vector<MultiHeadModel> models;  // one model, or E ensemble members
};

inline MultiHeadModel train_one_model(const MethodConfig& cfg, const Dataset& ds,
                                      std::uint64_t seed, double smoothing) {
  const std::size_t k = ds.spec.k;
  const std::size_t m = heads_for(cfg.kind);
  WeightScheme scheme;
  if (has_multiloss_scheme(cfg.kind)) {
    const double w_hi = cfg.w_hi > 0.0 ? cfg.w_hi : static_cast<double>(m);
    const double w_lo = cfg.w_lo > 0.0 ? cfg.w_lo : 1.0 / static_cast<double>(m);
    scheme = build_weight_scheme(k, m, w_hi, w_lo, derive_seed(seed, 11));
  } else {
    scheme = uniform_weight_scheme(k, m, 1.0);
  }
  MultiHeadModel model = make_multihead_model(ds.x.cols, cfg.hidden, cfg.feature_dim, scheme,
                                              Averaging::prob_average, derive_seed(seed, 12));
  const Matrix train_x = ds.train_x();
  const auto train_y = ds.train_y();
  if (m == 1) {
    detail::train_loop(model, train_x, train_y, cfg, seed,
                       [smoothing](const HeadOutputs& out, std::span<const int> y) {
                         return detail::smoothed_ce_grad(out, y, smoothing);
                       });
  } else {
    detail::train_loop(model, train_x, train_y, cfg, seed,
                       [&scheme = model.scheme](const HeadOutputs& out, std::span<const int> y) {
                         return mh_grad_logits(out, y, scheme);
                       });
  }
  return model;
}

inline TrainedMethod train_deep_ensemble(const MethodConfig& cfg, const Dataset& ds) {
  if (cfg.ensemble_size < 2) throw std::invalid_argument("deep ensemble: E >= 2 required");
  TrainedMethod tm{cfg, {}};
  for (std::size_t e = 0; e < cfg.ensemble_size; ++e) {
    tm.models.push_back(train_one_model(cfg, ds, derive_seed(cfg.seed, 0xE00 + e), 0.0));
  }
  return tm;
}

inline TrainedMethod train_method(const MethodConfig& cfg, const Dataset& ds) {
  switch (cfg.kind) {
    case MethodKind::sl1h:
      return {cfg, {train_one_model(cfg, ds, cfg.seed, 0.0)}};
    case MethodKind::ls:
      return {cfg, {train_one_model(cfg, ds, cfg.seed, cfg.ls_epsilon)}};
    case MethodKind::dens:
      return train_deep_ensemble(cfg, ds);
    case MethodKind::hsl2:
    case MethodKind::hml2:
    case MethodKind::hml4:
      return {cfg, {train_one_model(cfg, ds, cfg.seed, 0.0)}};
  }
  throw std::invalid_argument("train_method: unknown method kind");
}

// Uniform prediction facade: probs for evaluation, averaged logits for
// temperature scaling.
struct Predictor {
  std::function<Matrix(const Matrix&)> probs;
  std::function<Matrix(const Matrix&)> logits;
};

inline Predictor make_predictor(const TrainedMethod& tm) {
  auto models = std::make_shared<const std::vector<MultiHeadModel>>(tm.models);
  if (models->empty()) throw std::invalid_argument("make_predictor: no trained models");
  Predictor p;
  p.probs = [models](const Matrix& x) {
    Matrix acc;
    for (const MultiHeadModel& m : *models) {
      Matrix pm = predict(m, x).probs;
      if (acc.rows == 0) {
        acc = std::move(pm);
      } else {
        for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += pm.data[i];
      }
    }
    for (double& v : acc.data) v /= static_cast<double>(models->size());
    return acc;
  };
  p.logits = [models](const Matrix& x) {
    Matrix acc;
    for (const MultiHeadModel& m : *models) {
      Matrix zm = mean_logits(forward(m, mlp_forward(m.backbone, x).features()));
      if (acc.rows == 0) {
        acc = std::move(zm);
      } else {
        for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += zm.data[i];
      }
    }
    for (double& v : acc.data) v /= static_cast<double>(models->size());
    return acc;
  };
  return p;
}

inline Predictor bayes_predictor(const SyntheticSpec& spec) {
  Predictor p;
  p.probs = [spec](const Matrix& x) { return bayes_posterior_batch(spec, x); };
  p.logits = [spec](const Matrix& x) {
    Matrix z = bayes_posterior_batch(spec, x);
    for (double& v : z.data) v = std::log(std::max(v, kLogClamp));
    return z;
  };
  return p;
}

inline metrics::CalibrationReport report_from_probs(const Matrix& probs, std::span<const int> labels,
                                                    std::size_t n_bins, const std::string& method,
                                                    const std::string& split) {
  if (probs.rows == 0) throw std::invalid_argument("evaluate: empty split");
  metrics::check_prob_batch(probs, labels);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    double sum = 0.0;
    for (double v : probs.row(i)) {
      if (v < -1e-9) throw std::runtime_error("evaluate: negative probability");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw std::runtime_error("evaluate: probability row does not sum to 1");
  }
  std::vector<double> conf(probs.rows);
  std::vector<std::uint8_t> correct(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const std::size_t j = argmax_lowest(probs.row(i));
    conf[i] = probs(i, j);
    correct[i] = j == static_cast<std::size_t>(labels[i]) ? 1 : 0;
  }
  metrics::CalibrationReport r;
  r.method = method;
  r.split = split;
  r.n_samples = probs.rows;
  r.bins = metrics::reliability_table(conf, correct, n_bins);
  r.ece = metrics::ece_from_table(r.bins, probs.rows);
  r.accuracy = metrics::accuracy(probs, labels);
  r.nll = metrics::nll(probs, labels);
  r.brier = metrics::brier(probs, labels);
  return r;
}

inline metrics::CalibrationReport evaluate(const Predictor& predictor, const Matrix& x,
                                           std::span<const int> y, std::size_t n_bins,
                                           const std::string& method, const std::string& split) {
  return report_from_probs(predictor.probs(x), y, n_bins, method, split);
}

// --- suite -----------------------------------------------------------------

struct SuiteConfig {
  SyntheticSpec spec;
  std::vector<MethodConfig> methods;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t n_bins = 15;
  bool ts_comparison = true;
};

inline SuiteConfig default_suite_config() {
  SuiteConfig cfg;
  cfg.spec.priors = geometric_priors(cfg.spec.k);
  for (MethodKind kind : {MethodKind::sl1h, MethodKind::ls, MethodKind::dens, MethodKind::hsl2,
                          MethodKind::hml2, MethodKind::hml4}) {
    MethodConfig mc;
    mc.kind = kind;
    cfg.methods.push_back(mc);
  }
  return cfg;
}

struct TsCell {
  double temperature = 1.0;
  double val_nll_t1 = 0.0;
  double val_nll_fitted = 0.0;
  metrics::CalibrationReport pre;   // logit-average forward, untempered
  metrics::CalibrationReport post;  // tempered
};

struct SuiteCell {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  metrics::CalibrationReport report;
  std::optional<TsCell> ts;
};

struct MethodSummary {
  std::string method;
  std::size_t n_ok = 0;
  double acc_median = 0.0, acc_std = 0.0;
  double ece_median = 0.0, ece_std = 0.0;
  double nll_median = 0.0, nll_std = 0.0;
  double brier_median = 0.0, brier_std = 0.0;
};

struct ExperimentResult {
  SuiteConfig config;
  std::vector<SuiteCell> cells;
  std::vector<MethodSummary> summaries;
  metrics::RankTable ranks;

  const SuiteCell& cell(const std::string& method, std::uint64_t seed) const {
    for (const SuiteCell& c : cells) {
      if (c.method == method && c.seed == seed) return c;
    }
    throw std::out_of_range("no suite cell for " + method + " seed " + std::to_string(seed));
  }
  const MethodSummary& summary(const std::string& method) const {
    for (const MethodSummary& s : summaries) {
      if (s.method == method) return s;
    }
    throw std::out_of_range("no summary for " + method);
  }
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline void run_cell(const SuiteConfig& cfg, const Dataset& ds, SuiteCell& cell,
                     const MethodConfig& mc) {
  const TrainedMethod tm = train_method(mc, ds);
  const Predictor pred = make_predictor(tm);
  const Matrix test_x = ds.test_x();
  const auto test_y = ds.test_y();
  cell.report = evaluate(pred, test_x, test_y, cfg.n_bins, cell.method, "test");
  if (cfg.ts_comparison) {
    TsCell ts;
    const Matrix val_logits = pred.logits(ds.val_x());
    auto [t, trace] = posthoc::fit_temperature(val_logits, ds.val_y());
    ts.temperature = t.value;
    ts.val_nll_t1 = metrics::nll(softmax_rows(val_logits), ds.val_y());
    ts.val_nll_fitted = trace.final_nll;
    const Matrix test_logits = pred.logits(test_x);
    ts.pre = report_from_probs(softmax_rows(test_logits), test_y, cfg.n_bins, cell.method,
                               "test:logit-avg");
    ts.post = report_from_probs(posthoc::apply_temperature(test_logits, t), test_y, cfg.n_bins,
                                cell.method + "+TS", "test:logit-avg");
    cell.ts = std::move(ts);
  }
  cell.ok = true;
}

}  // namespace detail

// Trains and evaluates every (method, seed) cell. Cells are independent;
// jobs > 1 spreads them over threads without changing any result. A
// failing cell is recorded and the suite continues.
inline ExperimentResult run_suite(const SuiteConfig& cfg, std::size_t jobs = 1) {
  if (cfg.methods.empty()) throw std::invalid_argument("run_suite: no methods");
  if (cfg.seeds.empty()) throw std::invalid_argument("run_suite: no seeds");
  validate(cfg.spec);

  const Dataset ds = gen_gaussian_mixture(cfg.spec);
  ExperimentResult result;
  result.config = cfg;
  result.cells.resize(cfg.methods.size() * cfg.seeds.size());

  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= result.cells.size()) break;
      const MethodConfig& base = cfg.methods[i / cfg.seeds.size()];
      MethodConfig mc = base;
      mc.seed = cfg.seeds[i % cfg.seeds.size()];
      SuiteCell& cell = result.cells[i];
      cell.method = to_string(mc.kind);
      cell.seed = mc.seed;
      try {
        detail::run_cell(cfg, ds, cell, mc);
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    std::vector<double> acc, ece_v, nll_v, brier_v;
    MethodSummary s;
    s.method = to_string(cfg.methods[mi].kind);
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
      const SuiteCell& cell = result.cells[mi * cfg.seeds.size() + si];
      if (!cell.ok) continue;
      acc.push_back(cell.report.accuracy);
      ece_v.push_back(cell.report.ece);
      nll_v.push_back(cell.report.nll);
      brier_v.push_back(cell.report.brier);
    }
    s.n_ok = acc.size();
    if (s.n_ok > 0) {
      s.acc_median = detail::median(acc);
      s.acc_std = detail::sample_std(acc);
      s.ece_median = detail::median(ece_v);
      s.ece_std = detail::sample_std(ece_v);
      s.nll_median = detail::median(nll_v);
      s.nll_std = detail::sample_std(nll_v);
      s.brier_median = detail::median(brier_v);
      s.brier_std = detail::sample_std(brier_v);
    }
    result.summaries.push_back(std::move(s));
  }

  std::vector<metrics::CalibrationReport> median_reports;
  for (const MethodSummary& s : result.summaries) {
    if (s.n_ok == 0) continue;
    metrics::CalibrationReport r;
    r.method = s.method;
    r.split = "test:median";
    r.accuracy = s.acc_median;
    r.ece = s.ece_median;
    r.nll = s.nll_median;
    r.brier = s.brier_median;
    median_reports.push_back(std::move(r));
  }
  if (median_reports.size() >= 2) result.ranks = metrics::rank_aggregate(median_reports);
  return result;
}

}  // namespace mhml::bench
