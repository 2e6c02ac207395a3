// Calibration and accuracy metrics: ECE over a uniform confidence
// partition, NLL, Brier, accuracy, reliability bin tables, and the
// average-rank aggregation across methods.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mhml/matrix.hpp"
#include "mhml/multihead.hpp"

namespace mhml::metrics {

struct BinStats {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double acc = 0.0;   // fraction correct; 0 when empty
  double conf = 0.0;  // mean confidence; 0 when empty
};

struct CalibrationReport {
  std::string method;
  std::string split;
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  double ece = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  std::vector<BinStats> bins;
};

// Bins are ((s-1)/n, s/n], right-inclusive; confidence exactly 0 lands in
// the first bin. Returns a 0-based index.
inline std::size_t bin_index(double confidence, std::size_t n_bins) {
  if (confidence <= 0.0) return 0;
  const double scaled = std::ceil(confidence * static_cast<double>(n_bins));
  auto idx = static_cast<std::size_t>(scaled) - 1;
  return std::min(idx, n_bins - 1);
}

inline void check_confidences(std::span<const double> conf, std::span<const std::uint8_t> correct,
                              std::size_t n_bins) {
  if (conf.empty()) throw std::invalid_argument("calibration: empty input");
  if (conf.size() != correct.size()) throw std::invalid_argument("calibration: size mismatch");
  if (n_bins < 1) throw std::invalid_argument("calibration: n_bins >= 1 required");
  for (double c : conf) {
    if (!(c >= 0.0 && c <= 1.0)) {
      throw std::invalid_argument("calibration: confidence outside [0, 1]");
    }
  }
}

// One BinStats per bin, empty bins included with acc = conf = 0.
inline std::vector<BinStats> reliability_table(std::span<const double> conf,
                                               std::span<const std::uint8_t> correct,
                                               std::size_t n_bins) {
  check_confidences(conf, correct, n_bins);
  std::vector<BinStats> bins(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<std::size_t> correct_sum(n_bins, 0);
  for (std::size_t s = 0; s < n_bins; ++s) {
    bins[s].lo = static_cast<double>(s) / static_cast<double>(n_bins);
    bins[s].hi = static_cast<double>(s + 1) / static_cast<double>(n_bins);
  }
  for (std::size_t i = 0; i < conf.size(); ++i) {
    const std::size_t s = bin_index(conf[i], n_bins);
    bins[s].count += 1;
    conf_sum[s] += conf[i];
    correct_sum[s] += correct[i] ? 1 : 0;
  }
  for (std::size_t s = 0; s < n_bins; ++s) {
    if (bins[s].count > 0) {
      bins[s].acc = static_cast<double>(correct_sum[s]) / static_cast<double>(bins[s].count);
      bins[s].conf = conf_sum[s] / static_cast<double>(bins[s].count);
    }
  }
  return bins;
}

inline double ece_from_table(const std::vector<BinStats>& bins, std::size_t n_samples) {
  double total = 0.0;
  for (const BinStats& b : bins) {
    if (b.count == 0) continue;
    total += static_cast<double>(b.count) / static_cast<double>(n_samples) * std::abs(b.acc - b.conf);
  }
  return total;
}

inline double ece(std::span<const double> conf, std::span<const std::uint8_t> correct,
                  std::size_t n_bins) {
  return ece_from_table(reliability_table(conf, correct, n_bins), conf.size());
}

inline void check_prob_batch(const Matrix& probs, std::span<const int> labels) {
  if (probs.rows == 0) throw std::invalid_argument("metrics: empty probability batch");
  if (probs.rows != labels.size()) throw std::invalid_argument("metrics: label count mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols) {
      throw std::invalid_argument("metrics: label out of range");
    }
  }
}

inline double nll(const Matrix& probs, std::span<const int> labels) {
  check_prob_batch(probs, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    total += cross_entropy(probs.row(i), labels[i]);
  }
  return total / static_cast<double>(probs.rows);
}

inline double brier(const Matrix& probs, std::span<const int> labels) {
  check_prob_batch(probs, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    auto p = probs.row(i);
    const auto y = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double d = p[j] - (j == y ? 1.0 : 0.0);
      total += d * d;
    }
  }
  return total / static_cast<double>(probs.rows);
}

inline double accuracy(const Matrix& probs, std::span<const int> labels) {
  check_prob_batch(probs, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    if (argmax_lowest(probs.row(i)) == static_cast<std::size_t>(labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.rows);
}

struct RankRow {
  std::string method;
  double acc_rank = 0.0;
  double ece_rank = 0.0;
  double nll_rank = 0.0;
  double avg_rank = 0.0;
};

struct RankTable {
  std::vector<RankRow> rows;
};

namespace detail {

// Fractional ranking: ties get the average of the positions they span.
inline std::vector<double> ranks(const std::vector<double>& values, bool descending) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? values[a] > values[b] : values[a] < values[b];
  });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = static_cast<double>(i + j) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace detail

// Ranks per metric (accuracy high-is-better; ECE and NLL low-is-better),
// averaged across the three leaderboards.
inline RankTable rank_aggregate(const std::vector<CalibrationReport>& reports) {
  if (reports.size() < 2) throw std::invalid_argument("rank_aggregate: need >= 2 methods");
  for (const CalibrationReport& r : reports) {
    if (r.split != reports.front().split) {
      throw std::invalid_argument("rank_aggregate: reports from different splits");
    }
  }
  std::vector<double> acc, ece_v, nll_v;
  for (const CalibrationReport& r : reports) {
    acc.push_back(r.accuracy);
    ece_v.push_back(r.ece);
    nll_v.push_back(r.nll);
  }
  const std::vector<double> ra = detail::ranks(acc, true);
  const std::vector<double> re = detail::ranks(ece_v, false);
  const std::vector<double> rn = detail::ranks(nll_v, false);
  RankTable table;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    table.rows.push_back({reports[i].method, ra[i], re[i], rn[i], (ra[i] + re[i] + rn[i]) / 3.0});
  }
  return table;
}

// --- JSON serialization ---------------------------------------------------

// Metric floats are stored with 6 significant digits; parsing and
// re-serializing a document reproduces it byte for byte.
inline double round6(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return std::strtod(buf, nullptr);
}

inline void to_json(nlohmann::json& j, const BinStats& b) {
  j = {{"lo", round6(b.lo)}, {"hi", round6(b.hi)}, {"count", b.count},
       {"acc", round6(b.acc)}, {"conf", round6(b.conf)}};
}

inline void from_json(const nlohmann::json& j, BinStats& b) {
  b.lo = j.at("lo").get<double>();
  b.hi = j.at("hi").get<double>();
  b.count = j.at("count").get<std::size_t>();
  b.acc = j.at("acc").get<double>();
  b.conf = j.at("conf").get<double>();
}

inline void to_json(nlohmann::json& j, const CalibrationReport& r) {
  j = {{"method", r.method},          {"split", r.split}, {"n_samples", r.n_samples},
       {"accuracy", round6(r.accuracy)}, {"ece", round6(r.ece)}, {"nll", round6(r.nll)},
       {"brier", round6(r.brier)},    {"bins", r.bins}};
}

inline void from_json(const nlohmann::json& j, CalibrationReport& r) {
  r.method = j.at("method").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.ece = j.at("ece").get<double>();
  r.nll = j.at("nll").get<double>();
  r.brier = j.at("brier").get<double>();
  r.bins = j.at("bins").get<std::vector<BinStats>>();
}

inline void to_json(nlohmann::json& j, const RankRow& r) {
  j = {{"method", r.method},
       {"acc_rank", round6(r.acc_rank)},
       {"ece_rank", round6(r.ece_rank)},
       {"nll_rank", round6(r.nll_rank)},
       {"avg_rank", round6(r.avg_rank)}};
}

inline void from_json(const nlohmann::json& j, RankRow& r) {
  r.method = j.at("method").get<std::string>();
  r.acc_rank = j.at("acc_rank").get<double>();
  r.ece_rank = j.at("ece_rank").get<double>();
  r.nll_rank = j.at("nll_rank").get<double>();
  r.avg_rank = j.at("avg_rank").get<double>();
}

inline void to_json(nlohmann::json& j, const RankTable& t) { j = {{"rows", t.rows}}; }

inline void from_json(const nlohmann::json& j, RankTable& t) {
  t.rows = j.at("rows").get<std::vector<RankRow>>();
}

}  // namespace mhml::metrics
