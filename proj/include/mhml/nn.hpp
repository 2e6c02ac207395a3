// Minimal dense feed-forward engine: linear layers, ReLU on every layer
// except the last, manual backprop, SGD with momentum. Everything is
// 64-bit; gradients are exact chain-rule quantities checked elsewhere
// against finite differences.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mhml/matrix.hpp"
#include "mhml/rng.hpp"

namespace mhml {

// Row-stable softmax: subtracts the row max before exponentiating.
inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  if (!all_finite(logits)) throw std::invalid_argument("softmax: non-finite input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp(logits[j] - m);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline Matrix softmax_rows(const Matrix& z) {
  if (!all_finite(z)) throw std::invalid_argument("softmax: non-finite input");
  Matrix p(z.rows, z.cols);
  for (std::size_t i = 0; i < z.rows; ++i) {
    auto zi = z.row(i);
    const double m = *std::max_element(zi.begin(), zi.end());
    double sum = 0.0;
    auto pi = p.row(i);
    for (std::size_t j = 0; j < z.cols; ++j) {
      pi[j] = std::exp(zi[j] - m);
      sum += pi[j];
    }
    for (std::size_t j = 0; j < z.cols; ++j) pi[j] /= sum;
  }
  return p;
}

inline std::vector<double> one_hot(int y, std::size_t k) {
  if (y < 0 || static_cast<std::size_t>(y) >= k) {
    throw std::invalid_argument("one_hot: label " + std::to_string(y) + " outside [0, " +
                                std::to_string(k) + ")");
  }
  std::vector<double> v(k, 0.0);
  v[static_cast<std::size_t>(y)] = 1.0;
  return v;
}

struct DenseLayer {
  Matrix w;               // out x in
  std::vector<double> b;  // out

  std::size_t in_dim() const { return w.cols; }
  std::size_t out_dim() const { return w.rows; }
};

// Glorot-uniform init, seeded.
inline DenseLayer make_dense_layer(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0)};
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& v : layer.w.data) v = rng.uniform(-a, a);
  return layer;
}

// y = x * W^T + b for a batch of rows.
inline Matrix dense_forward(const DenseLayer& layer, const Matrix& x) {
  if (x.cols != layer.in_dim()) {
    throw std::invalid_argument("dense_forward: input width " + std::to_string(x.cols) +
                                " != layer fan-in " + std::to_string(layer.in_dim()));
  }
  Matrix y = matmul(x, transpose(layer.w));
  for (std::size_t i = 0; i < y.rows; ++i) {
    auto yi = y.row(i);
    for (std::size_t j = 0; j < y.cols; ++j) yi[j] += layer.b[j];
  }
  return y;
}

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }
};

// dims chains input through hidden widths to the feature width; ReLU is
// applied after every layer except the last, which stays linear.
inline MlpParams make_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output dims");
  Rng rng(seed);
  MlpParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    p.layers.push_back(make_dense_layer(dims[l], dims[l + 1], rng));
  }
  return p;
}

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre;   // z_l, before activation
  std::vector<Matrix> post;  // a_l; post.back() is the feature batch

  std::size_t batch_size() const { return input.rows; }
  const Matrix& features() const { return post.back(); }
};

inline ForwardTrace mlp_forward(const MlpParams& params, const Matrix& batch) {
  if (batch.cols != params.input_dim()) {
    throw std::invalid_argument("mlp_forward: batch width " + std::to_string(batch.cols) +
                                " != input dim " + std::to_string(params.input_dim()));
  }
  ForwardTrace trace;
  trace.input = batch;
  const Matrix* cur = &trace.input;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Matrix z = dense_forward(params.layers[l], *cur);
    trace.pre.push_back(std::move(z));
    Matrix a = trace.pre.back();
    if (l + 1 < params.layers.size()) {
      for (double& v : a.data) v = v > 0.0 ? v : 0.0;  // ReLU'(0) = 0
    }
    trace.post.push_back(std::move(a));
    cur = &trace.post.back();
  }
  return trace;
}

struct MlpGrads {
  std::vector<DenseLayer> layers;  // same shapes as the params
  Matrix input;                    // gradient at the batch input
};

// Chain rule through the trace. Gradients are summed over the batch; any
// 1/B factor belongs to the loss that produced grad_at_features.
inline MlpGrads mlp_backward(const MlpParams& params, const ForwardTrace& trace,
                             const Matrix& grad_at_features) {
  const std::size_t n_layers = params.layers.size();
  if (trace.pre.size() != n_layers) throw std::invalid_argument("mlp_backward: trace/params layer mismatch");
  if (!grad_at_features.same_shape(trace.features())) {
    throw std::invalid_argument("mlp_backward: upstream gradient shape mismatch");
  }
  MlpGrads grads;
  grads.layers.resize(n_layers);
  Matrix g = grad_at_features;  // gradient at z_l of the current layer
  for (std::size_t l = n_layers; l-- > 0;) {
    const Matrix& layer_in = (l == 0) ? trace.input : trace.post[l - 1];
    DenseLayer& gl = grads.layers[l];
    gl.w = matmul_tn(g, layer_in);  // upstream^T * input, batch-summed
    gl.b.assign(params.layers[l].out_dim(), 0.0);
    for (std::size_t i = 0; i < g.rows; ++i) {
      auto gi = g.row(i);
      for (std::size_t j = 0; j < g.cols; ++j) gl.b[j] += gi[j];
    }
    Matrix g_prev = matmul(g, params.layers[l].w);
    if (l > 0) {
      const Matrix& z_prev = trace.pre[l - 1];
      for (std::size_t i = 0; i < g_prev.data.size(); ++i) {
        if (z_prev.data[i] <= 0.0) g_prev.data[i] = 0.0;
      }
    }
    g = std::move(g_prev);
  }
  grads.input = std::move(g);
  return grads;
}

struct OptimizerState {
  double lr = 1e-2;
  double momentum = 0.0;
  std::vector<DenseLayer> buffers;  // momentum, same shapes as the params
};

inline OptimizerState make_sgd_state(const std::vector<DenseLayer>& params, double lr, double momentum) {
  OptimizerState st;
  st.lr = lr;
  st.momentum = momentum;
  for (const DenseLayer& p : params) {
    st.buffers.push_back({Matrix(p.w.rows, p.w.cols), std::vector<double>(p.b.size(), 0.0)});
  }
  return st;
}

// buffer <- momentum * buffer + grad; param <- param - lr * buffer
inline void sgd_step(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads,
                     OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.buffers.size()) {
    throw std::invalid_argument("sgd_step: parameter/gradient/buffer count mismatch");
  }
  for (std::size_t l = 0; l < params.size(); ++l) {
    if (!params[l].w.same_shape(grads[l].w) || params[l].b.size() != grads[l].b.size()) {
      throw std::invalid_argument("sgd_step: shape mismatch at layer " + std::to_string(l));
    }
    DenseLayer& buf = state.buffers[l];
    for (std::size_t i = 0; i < buf.w.data.size(); ++i) {
      buf.w.data[i] = state.momentum * buf.w.data[i] + grads[l].w.data[i];
      params[l].w.data[i] -= state.lr * buf.w.data[i];
    }
    for (std::size_t i = 0; i < buf.b.size(); ++i) {
      buf.b[i] = state.momentum * buf.b[i] + grads[l].b[i];
      params[l].b[i] -= state.lr * buf.b[i];
    }
  }
}

inline void sgd_step(MlpParams& params, const MlpGrads& grads, OptimizerState& state) {
  sgd_step(params.layers, grads.layers, state);
}

// Flat parameter views for the finite-difference harnesses.
inline std::vector<double> layers_to_vector(const std::vector<DenseLayer>& layers) {
  std::vector<double> v;
  for (const DenseLayer& l : layers) {
    v.insert(v.end(), l.w.data.begin(), l.w.data.end());
    v.insert(v.end(), l.b.begin(), l.b.end());
  }
  return v;
}

inline void layers_from_vector(std::vector<DenseLayer>& layers, std::span<const double> v) {
  std::size_t at = 0;
  for (DenseLayer& l : layers) {
    std::copy_n(v.begin() + at, l.w.data.size(), l.w.data.begin());
    at += l.w.data.size();
    std::copy_n(v.begin() + at, l.b.size(), l.b.begin());
    at += l.b.size();
  }
  if (at != v.size()) throw std::invalid_argument("layers_from_vector: length mismatch");
}

}  // namespace mhml
