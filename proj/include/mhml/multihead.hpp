// Multi-head multi-loss classifier: M linear heads on a shared backbone,
// complementary per-head weight vectors, the combined loss
//
//   L_MH = CE(p_mean, y) + sum_m wCE(p_m, y; omega_m)
//
// and its analytic per-head logit gradient
//
//   dL_MH/dz_m = (omega_m[y] + p_m[y] / sum_i p_i[y]) * (p_m - onehot(y)).
//
// The direction vector is (p_m - onehot(y)); the finite-difference
// harness in gradcheck.hpp pins this down.
#pragma once

#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mhml/nn.hpp"

namespace mhml {

struct WeightScheme {
  std::size_t k = 0;  // classes
  std::size_t m = 0;  // heads
  double w_hi = 0.0;
  double w_lo = 0.0;
  std::vector<std::size_t> head_of_class;    // class -> specializing head
  std::vector<std::vector<double>> vectors;  // m vectors of length k
  std::uint64_t seed = 0;
};

inline WeightScheme weight_scheme_from_assignment(std::size_t k, std::size_t m, double w_hi,
                                                  double w_lo,
                                                  std::vector<std::size_t> head_of_class,
                                                  std::uint64_t seed = 0) {
  if (head_of_class.size() != k) throw std::invalid_argument("weight scheme: assignment size != K");
  WeightScheme s{k, m, w_hi, w_lo, std::move(head_of_class), {}, seed};
  s.vectors.assign(m, std::vector<double>(k, w_lo));
  for (std::size_t c = 0; c < k; ++c) {
    if (s.head_of_class[c] >= m) throw std::invalid_argument("weight scheme: head index out of range");
    s.vectors[s.head_of_class[c]][c] = w_hi;
  }
  return s;
}

// Classes are shuffled by the seeded RNG and dealt to heads in contiguous
// blocks of floor(K/M); the K mod M leftover classes go one each to
// distinct heads, also picked by the RNG.
inline WeightScheme build_weight_scheme(std::size_t k, std::size_t m, double w_hi, double w_lo,
                                        std::uint64_t seed) {
  if (m < 1 || m > k) {
    throw std::invalid_argument("build_weight_scheme: need 1 <= M <= K, got M=" + std::to_string(m) +
                                " K=" + std::to_string(k));
  }
  if (!(w_hi > w_lo) || !(w_lo > 0.0)) {
    throw std::invalid_argument("build_weight_scheme: need w_hi > w_lo > 0");
  }
  Rng rng(seed);
  std::vector<std::size_t> classes(k);
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes);

  std::vector<std::size_t> block(m, k / m);
  std::vector<std::size_t> heads(m);
  std::iota(heads.begin(), heads.end(), 0);
  rng.shuffle(heads);
  for (std::size_t r = 0; r < k % m; ++r) block[heads[r]] += 1;

  std::vector<std::size_t> head_of_class(k);
  std::size_t at = 0;
  for (std::size_t h = 0; h < m; ++h) {
    for (std::size_t i = 0; i < block[h]; ++i) head_of_class[classes[at++]] = h;
  }
  return weight_scheme_from_assignment(k, m, w_hi, w_lo, std::move(head_of_class), seed);
}

// Degenerate schemes used by the single-loss baselines and the gradient
// harnesses: every class carries the same weight on every head.
inline WeightScheme uniform_weight_scheme(std::size_t k, std::size_t m, double w) {
  std::vector<std::size_t> assignment(k);
  for (std::size_t c = 0; c < k; ++c) assignment[c] = c % m;
  return weight_scheme_from_assignment(k, m, w, w, std::move(assignment));
}

inline WeightScheme zero_weight_scheme(std::size_t k, std::size_t m) {
  return uniform_weight_scheme(k, m, 0.0);
}

enum class Averaging { prob_average, logit_average };

inline std::string to_string(Averaging a) {
  return a == Averaging::prob_average ? "prob-average" : "logit-average";
}

inline Averaging averaging_from_string(const std::string& s) {
  if (s == "prob-average") return Averaging::prob_average;
  if (s == "logit-average") return Averaging::logit_average;
  throw std::invalid_argument("unknown averaging mode '" + s + "'");
}

struct MultiHeadModel {
  MlpParams backbone;
  std::vector<DenseLayer> heads;  // each k x n
  WeightScheme scheme;
  Averaging averaging = Averaging::prob_average;

  std::size_t head_count() const { return heads.size(); }
  std::size_t class_count() const { return heads.front().out_dim(); }
  std::size_t feature_dim() const { return backbone.output_dim(); }
};

// Heads draw from per-head seed streams so they start diverse even under
// identical losses.
inline MultiHeadModel make_multihead_model(std::size_t input_dim,
                                           const std::vector<std::size_t>& hidden,
                                           std::size_t feature_dim, WeightScheme scheme,
                                           Averaging averaging, std::uint64_t seed) {
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(feature_dim);
  MultiHeadModel model;
  model.backbone = make_mlp(dims, derive_seed(seed, 0));
  for (std::size_t h = 0; h < scheme.m; ++h) {
    Rng head_rng(derive_seed(seed, 1 + h));
    model.heads.push_back(make_dense_layer(feature_dim, scheme.k, head_rng));
  }
  model.scheme = std::move(scheme);
  model.averaging = averaging;
  return model;
}

struct HeadOutputs {
  std::vector<Matrix> z_heads;  // m matrices, batch x k
  std::vector<Matrix> p_heads;
  Matrix p_mean;
  Averaging mode = Averaging::prob_average;

  std::size_t head_count() const { return z_heads.size(); }
  std::size_t batch_size() const { return p_mean.rows; }
  std::size_t class_count() const { return p_mean.cols; }
};

inline HeadOutputs outputs_from_logits(std::vector<Matrix> z_heads, Averaging mode) {
  if (z_heads.empty()) throw std::invalid_argument("outputs_from_logits: no heads");
  HeadOutputs out;
  out.mode = mode;
  const std::size_t m = z_heads.size();
  for (const Matrix& z : z_heads) {
    if (!z.same_shape(z_heads.front())) throw std::invalid_argument("outputs_from_logits: ragged logits");
    out.p_heads.push_back(softmax_rows(z));
  }
  if (mode == Averaging::prob_average) {
    out.p_mean = Matrix(z_heads[0].rows, z_heads[0].cols);
    for (const Matrix& p : out.p_heads) {
      for (std::size_t i = 0; i < p.data.size(); ++i) out.p_mean.data[i] += p.data[i];
    }
    for (double& v : out.p_mean.data) v /= static_cast<double>(m);
  } else {
    Matrix zbar(z_heads[0].rows, z_heads[0].cols);
    for (const Matrix& z : z_heads) {
      for (std::size_t i = 0; i < z.data.size(); ++i) zbar.data[i] += z.data[i];
    }
    for (double& v : zbar.data) v /= static_cast<double>(m);
    out.p_mean = softmax_rows(zbar);
  }
  out.z_heads = std::move(z_heads);
  return out;
}

inline Matrix mean_logits(const HeadOutputs& out) {
  Matrix zbar(out.z_heads[0].rows, out.z_heads[0].cols);
  for (const Matrix& z : out.z_heads) {
    for (std::size_t i = 0; i < z.data.size(); ++i) zbar.data[i] += z.data[i];
  }
  for (double& v : zbar.data) v /= static_cast<double>(out.head_count());
  return zbar;
}

inline HeadOutputs forward(const MultiHeadModel& model, const Matrix& features) {
  if (features.cols != model.feature_dim()) {
    throw std::invalid_argument("forward: feature width " + std::to_string(features.cols) +
                                " != backbone output " + std::to_string(model.feature_dim()));
  }
  std::vector<Matrix> z;
  z.reserve(model.head_count());
  for (const DenseLayer& head : model.heads) z.push_back(dense_forward(head, features));
  return outputs_from_logits(std::move(z), model.averaging);
}

constexpr double kLogClamp = 1e-12;

// -omega[y] * log(p[y]), log clamped at 1e-12.
inline double weighted_ce(std::span<const double> p, int y, std::span<const double> omega) {
  if (y < 0 || static_cast<std::size_t>(y) >= p.size()) throw std::invalid_argument("weighted_ce: label out of range");
  if (omega.size() != p.size()) throw std::invalid_argument("weighted_ce: weight vector size mismatch");
  const double py = std::max(p[static_cast<std::size_t>(y)], kLogClamp);
  return -omega[static_cast<std::size_t>(y)] * std::log(py);
}

inline double cross_entropy(std::span<const double> p, int y) {
  const double py = std::max(p[static_cast<std::size_t>(y)], kLogClamp);
  return -std::log(py);
}

inline void check_scheme_outputs(const HeadOutputs& out, const WeightScheme& scheme) {
  if (out.head_count() != scheme.m) {
    throw std::invalid_argument("head count " + std::to_string(out.head_count()) +
                                " does not match scheme M=" + std::to_string(scheme.m));
  }
  if (out.class_count() != scheme.k) {
    throw std::invalid_argument("class count " + std::to_string(out.class_count()) +
                                " does not match scheme K=" + std::to_string(scheme.k));
  }
}

// Combined loss, averaged over the batch.
inline double mh_loss(const HeadOutputs& out, std::span<const int> labels, const WeightScheme& scheme) {
  check_scheme_outputs(out, scheme);
  if (labels.size() != out.batch_size()) throw std::invalid_argument("mh_loss: label count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += cross_entropy(out.p_mean.row(i), labels[i]);
    for (std::size_t h = 0; h < scheme.m; ++h) {
      total += weighted_ce(out.p_heads[h].row(i), labels[i], scheme.vectors[h]);
    }
  }
  return total / static_cast<double>(labels.size());
}

// Gradient of mh_loss with respect to each head's logits. The batch mean
// in the loss carries through, so rows are scaled by 1/B.
inline std::vector<Matrix> mh_grad_logits(const HeadOutputs& out, std::span<const int> labels,
                                          const WeightScheme& scheme) {
  if (out.mode != Averaging::prob_average) {
    throw std::invalid_argument(
        "mh_grad_logits: defined for prob-average outputs; logit-average models train by "
        "backprop through the averaged logit");
  }
  check_scheme_outputs(out, scheme);
  if (labels.size() != out.batch_size()) throw std::invalid_argument("mh_grad_logits: label count mismatch");
  const std::size_t m = scheme.m;
  const std::size_t k = scheme.k;
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  std::vector<Matrix> grads(m, Matrix(out.batch_size(), k));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    double mass = 0.0;  // sum over heads of p_h[y]
    for (std::size_t h = 0; h < m; ++h) mass += out.p_heads[h](i, y);
    for (std::size_t h = 0; h < m; ++h) {
      // Equal-rate limit 1/M keeps the gradient finite if every head has
      // underflowed the true class.
      const double share =
          mass > 0.0 ? out.p_heads[h](i, y) / mass : 1.0 / static_cast<double>(m);
      const double factor = (scheme.vectors[h][y] + share) * inv_b;
      auto p = out.p_heads[h].row(i);
      auto g = grads[h].row(i);
      for (std::size_t j = 0; j < k; ++j) g[j] = factor * (p[j] - (j == y ? 1.0 : 0.0));
    }
  }
  return grads;
}

struct ModelGrads {
  std::vector<DenseLayer> backbone;
  std::vector<DenseLayer> heads;
};

// Plumbing shared by the loss backward and the tests that inject custom
// per-head upstream gradients.
inline ModelGrads backward_from_logit_grads(const MultiHeadModel& model, const ForwardTrace& trace,
                                            const std::vector<Matrix>& head_grads) {
  if (head_grads.size() != model.head_count()) {
    throw std::invalid_argument("backward: per-head gradient count mismatch");
  }
  const Matrix& features = trace.features();
  ModelGrads grads;
  Matrix g_feat(features.rows, features.cols);
  for (std::size_t h = 0; h < model.head_count(); ++h) {
    const Matrix& gz = head_grads[h];
    if (gz.rows != features.rows || gz.cols != model.class_count()) {
      throw std::invalid_argument("backward: head gradient shape mismatch");
    }
    DenseLayer hg;
    hg.w = matmul_tn(gz, features);
    hg.b.assign(model.class_count(), 0.0);
    for (std::size_t i = 0; i < gz.rows; ++i) {
      auto gi = gz.row(i);
      for (std::size_t j = 0; j < gz.cols; ++j) hg.b[j] += gi[j];
    }
    grads.heads.push_back(std::move(hg));
    const Matrix chunk = matmul(gz, model.heads[h].w);
    for (std::size_t i = 0; i < chunk.data.size(); ++i) g_feat.data[i] += chunk.data[i];
  }
  grads.backbone = mlp_backward(model.backbone, trace, g_feat).layers;
  return grads;
}

inline ModelGrads backward(const MultiHeadModel& model, const ForwardTrace& trace,
                           const HeadOutputs& out, std::span<const int> labels,
                           const WeightScheme& scheme) {
  if (trace.batch_size() != out.batch_size()) {
    throw std::invalid_argument("backward: trace batch does not match outputs");
  }
  if (trace.features().cols != model.feature_dim()) {
    throw std::invalid_argument("backward: trace feature width does not match model");
  }
  return backward_from_logit_grads(model, trace, mh_grad_logits(out, labels, scheme));
}

struct Prediction {
  Matrix probs;                    // p_mean per row
  std::vector<double> confidence;  // max entry
  std::vector<int> label;          // argmax, lowest index on ties
};

inline std::size_t argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

inline Prediction predict(const MultiHeadModel& model, const Matrix& batch) {
  const ForwardTrace trace = mlp_forward(model.backbone, batch);
  const HeadOutputs out = forward(model, trace.features());
  Prediction pred;
  pred.probs = out.p_mean;
  pred.confidence.resize(batch.rows);
  pred.label.resize(batch.rows);
  for (std::size_t i = 0; i < batch.rows; ++i) {
    const std::size_t j = argmax_lowest(pred.probs.row(i));
    pred.label[i] = static_cast<int>(j);
    pred.confidence[i] = pred.probs(i, j);
  }
  return pred;
}

// --- checkpoint serialization -------------------------------------------

namespace detail {

inline nlohmann::json layer_to_json(const DenseLayer& l) {
  return {{"out", l.w.rows}, {"in", l.w.cols}, {"w", l.w.data}, {"b", l.b}};
}

inline DenseLayer layer_from_json(const nlohmann::json& j) {
  DenseLayer l;
  l.w.rows = j.at("out").get<std::size_t>();
  l.w.cols = j.at("in").get<std::size_t>();
  l.w.data = j.at("w").get<std::vector<double>>();
  l.b = j.at("b").get<std::vector<double>>();
  if (l.w.data.size() != l.w.rows * l.w.cols || l.b.size() != l.w.rows) {
    throw std::invalid_argument("checkpoint: layer dimensions do not match payload");
  }
  return l;
}

}  // namespace detail

inline nlohmann::json scheme_to_json(const WeightScheme& s) {
  return {{"k", s.k},         {"m", s.m},
          {"w_hi", s.w_hi},   {"w_lo", s.w_lo},
          {"seed", s.seed},   {"assignment", s.head_of_class}};
}

inline WeightScheme scheme_from_json(const nlohmann::json& j) {
  return weight_scheme_from_assignment(j.at("k").get<std::size_t>(), j.at("m").get<std::size_t>(),
                                       j.at("w_hi").get<double>(), j.at("w_lo").get<double>(),
                                       j.at("assignment").get<std::vector<std::size_t>>(),
                                       j.value("seed", std::uint64_t{0}));
}

inline nlohmann::json checkpoint_to_json(const MultiHeadModel& model) {
  nlohmann::json j;
  j["format"] = "mhml-checkpoint";
  j["version"] = 1;
  j["averaging"] = to_string(model.averaging);
  j["scheme"] = scheme_to_json(model.scheme);
  j["backbone"] = nlohmann::json::array();
  for (const DenseLayer& l : model.backbone.layers) j["backbone"].push_back(detail::layer_to_json(l));
  j["heads"] = nlohmann::json::array();
  for (const DenseLayer& l : model.heads) j["heads"].push_back(detail::layer_to_json(l));
  return j;
}

inline MultiHeadModel checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mhml-checkpoint") {
    throw std::invalid_argument("checkpoint: unrecognized format tag");
  }
  if (j.at("version").get<int>() != 1) {
    throw std::invalid_argument("checkpoint: unsupported version");
  }
  MultiHeadModel model;
  model.averaging = averaging_from_string(j.at("averaging").get<std::string>());
  model.scheme = scheme_from_json(j.at("scheme"));
  for (const auto& lj : j.at("backbone")) model.backbone.layers.push_back(detail::layer_from_json(lj));
  for (const auto& lj : j.at("heads")) model.heads.push_back(detail::layer_from_json(lj));
  if (model.heads.size() != model.scheme.m) throw std::invalid_argument("checkpoint: head count != scheme M");
  return model;
}

inline void save_checkpoint(const MultiHeadModel& model, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint file for writing: " + path);
  f << checkpoint_to_json(model).dump(2) << '\n';
}

inline MultiHeadModel load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint file: " + path);
  nlohmann::json j;
  f >> j;
  return checkpoint_from_json(j);
}

}  // namespace mhml
