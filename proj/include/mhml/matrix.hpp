// Dense row-major double matrix plus the handful of kernels the training
// engine needs. Loop orders are chosen so the hot inner loops run over
// contiguous memory.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mhml {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // rows * cols, row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline bool all_finite(const Matrix& m) { return all_finite(std::span<const double>(m.data)); }

inline void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (m.rows != rows || m.cols != cols) {
    throw std::invalid_argument(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                                ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
  }
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  }
  return t;
}

// C = A * B, ikj order: the j loop is contiguous in both B and C.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows));
  }
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* ci = c.data.data() + i * c.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      const double* bk = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

// C = A^T * B (A: n x r, B: n x c -> r x c), accumulated sample by sample.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) {
    throw std::invalid_argument("matmul_tn: row counts " + std::to_string(a.rows) + " vs " +
                                std::to_string(b.rows));
  }
  Matrix c(a.cols, b.cols);
  for (std::size_t s = 0; s < a.rows; ++s) {
    const double* as = a.data.data() + s * a.cols;
    const double* bs = b.data.data() + s * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double v = as[i];
      double* ci = c.data.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += v * bs[j];
    }
  }
  return c;
}

}  // namespace mhml
