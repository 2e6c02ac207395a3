// Temperature scaling: a single positive scalar dividing the logits,
// fitted to minimize validation NLL. Multi-head models are scaled on the
// average of their head logits (average first, softmax after), the only
// variant that exposes a logit space to fit in.
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mhml/metrics.hpp"
#include "mhml/multihead.hpp"

namespace mhml::posthoc {

struct Temperature {
  double value = 1.0;
};

struct FitTrace {
  std::vector<std::pair<double, double>> evaluated;  // (T, validation NLL)
  double chosen_t = 1.0;
  double final_nll = 0.0;
};

// softmax(z / T) rowwise; argmax per row is unchanged for any T > 0.
inline Matrix apply_temperature(const Matrix& logits, Temperature t) {
  if (!(t.value > 0.0) || !std::isfinite(t.value)) {
    throw std::invalid_argument("apply_temperature: T must be positive and finite");
  }
  Matrix scaled = logits;
  for (double& v : scaled.data) v /= t.value;
  return softmax_rows(scaled);
}

// Minimizes NLL over log T in [-3, 3]: a 61-point grid, then golden-section
// refinement around the best grid point down to |delta log T| < 1e-6.
inline std::pair<Temperature, FitTrace> fit_temperature(const Matrix& val_logits,
                                                        std::span<const int> val_labels) {
  if (val_logits.rows == 0) throw std::invalid_argument("fit_temperature: empty validation set");
  if (val_logits.rows != val_labels.size()) {
    throw std::invalid_argument("fit_temperature: label count mismatch");
  }
  if (!all_finite(val_logits)) throw std::invalid_argument("fit_temperature: non-finite logits");

  FitTrace trace;
  double best_logt = 0.0;
  double best_nll = std::numeric_limits<double>::infinity();
  const auto eval = [&](double logt) {
    const double t = std::exp(logt);
    const double v = metrics::nll(apply_temperature(val_logits, {t}), val_labels);
    trace.evaluated.emplace_back(t, v);
    if (v < best_nll) {
      best_nll = v;
      best_logt = logt;
    }
    return v;
  };

  constexpr int kGridPoints = 61;
  constexpr double kLo = -3.0, kHi = 3.0;
  int best_idx = 0;
  double best_grid = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kGridPoints; ++i) {
    const double logt = kLo + (kHi - kLo) * i / (kGridPoints - 1);
    const double v = eval(logt);
    if (v < best_grid) {
      best_grid = v;
      best_idx = i;
    }
  }

  const double step = (kHi - kLo) / (kGridPoints - 1);
  double a = kLo + step * std::max(0, best_idx - 1);
  double b = kLo + step * std::min(kGridPoints - 1, best_idx + 1);
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = b - kInvPhi * (b - a);
  double x2 = a + kInvPhi * (b - a);
  double f1 = eval(x1);
  double f2 = eval(x2);
  while (b - a > 1e-6) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = eval(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = eval(x2);
    }
  }

  trace.chosen_t = std::exp(best_logt);
  trace.final_nll = best_nll;
  return {Temperature{trace.chosen_t}, std::move(trace)};
}

// A multi-head model with its averaged logits tempered.
struct CalibratedMultihead {
  MultiHeadModel model;  // forced to logit-average
  Temperature temperature;
  FitTrace trace;

  Matrix logits(const Matrix& batch) const {
    const ForwardTrace ft = mlp_forward(model.backbone, batch);
    return mean_logits(forward(model, ft.features()));
  }

  Matrix probs(const Matrix& batch) const { return apply_temperature(logits(batch), temperature); }
};

inline CalibratedMultihead ts_for_multihead(const MultiHeadModel& model, const Matrix& val_x,
                                            std::span<const int> val_y) {
  if (model.averaging != Averaging::logit_average) {
    throw std::invalid_argument(
        "ts_for_multihead: model is in prob-average mode; temperature scaling operates on the "
        "logit space, re-run forward in logit-average mode");
  }
  CalibratedMultihead cal{model, {}, {}};
  const Matrix val_logits = cal.logits(val_x);
  auto [t, trace] = fit_temperature(val_logits, val_y);
  cal.temperature = t;
  cal.trace = std::move(trace);
  return cal;
}

}  // namespace mhml::posthoc
