#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "groupcap/errors.hpp"

namespace groupcap {

/// Dense row-major matrix of doubles. Every numeric quantity in the library
/// (features, weights, attention grids, logits) is carried as a Matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                           " does not match " + shape_string(rows_, cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape() const { return shape_string(rows_, cols_); }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(*this, o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }
  static void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
      throw DimensionError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
    }
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Boolean grid; `true` marks an allowed (unmasked) cell.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t rows, std::size_t cols, bool allowed = true)
      : rows_(rows), cols_(cols), cells_(rows * cols, allowed ? 1 : 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool allowed(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool allowed) { cells_[r * cols_ + c] = allowed ? 1 : 0; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<unsigned char> cells_;
};

namespace kernels {

// out += op(a) * op(b), where op transposes when the flag is set.
inline void gemm_acc(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& out) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb || out.rows() != m || out.cols() != n) {
    throw DimensionError("gemm: incompatible shapes " + a.shape() + (trans_a ? "^T" : "") + " x " +
                         b.shape() + (trans_b ? "^T" : "") + " -> " + out.shape());
  }
  double* o = out.data();
  const double* pa = a.data();
  const double* pb = b.data();
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = o + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        if (av == 0.0) continue;
        const double* brow = pb + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (trans_a && !trans_b) {
    // a is k x m
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = pa + p * m;
      const double* brow = pb + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* orow = o + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // b is n x k
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = pa + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = pb + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        o[i * n + j] += s;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += pa[p * m + i] * pb[j * k + p];
        o[i * n + j] += s;
      }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape() + " x " + b.shape());
  }
  Matrix out(a.rows(), b.cols());
  gemm_acc(a, false, b, false, out);
  return out;
}

inline void add_rowvec_inplace(Matrix& x, const Matrix& rowvec) {
  if (rowvec.rows() != 1 || rowvec.cols() != x.cols()) {
    throw DimensionError("broadcast_add_rowvec: " + x.shape() + " + " + rowvec.shape());
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) row[c] += rowvec[c];
  }
}

// Row-wise log-softmax of one row into `out`.
inline void log_softmax_row(std::span<const double> in, std::span<double> out) {
  const double mx = *std::max_element(in.begin(), in.end());
  double s = 0.0;
  for (double v : in) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] - lse;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace kernels

inline std::string to_string(const Matrix& m) {
  std::ostringstream os;
  os << "[";
  for (std::size_t r = 0; r < m.rows(); ++r) {
    os << (r ? ", [" : "[");
    for (std::size_t c = 0; c < m.cols(); ++c) os << (c ? ", " : "") << m(r, c);
    os << "]";
  }
  os << "]";
  return os.str();
}

}  // namespace groupcap
