#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "lpfm/errors.hpp"

namespace lpfm {

/// Dense row-major matrix. Small sizes only; no expression templates.
template <class S>
class Matrix {
 public:
  using value_type = S;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, S fill = S(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<S> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw InternalError("Matrix: data size does not match shape");
  }
  Matrix(std::initializer_list<std::initializer_list<S>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw InternalError("Matrix: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = S(1);
    return m;
  }
  static Matrix row_vector(std::span<const S> v) {
    return Matrix(1, v.size(), std::vector<S>(v.begin(), v.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  S& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const S& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<S> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const S> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<S> data() noexcept { return data_; }
  std::span<const S> data() const noexcept { return data_; }
  const std::vector<S>& storage() const noexcept { return data_; }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
  }

  template <class T>
  Matrix<T> cast() const {
    std::vector<T> out(data_.begin(), data_.end());
    return Matrix<T>(rows_, cols_, std::move(out));
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix& operator+=(const Matrix& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(S s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, S s) { return a *= s; }
  friend Matrix operator*(S s, Matrix a) { return a *= s; }
  friend Matrix operator-(Matrix a) {
    for (auto& v : a.data_) v = -v;
    return a;
  }
  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void check_same(const Matrix& o, const char* op) const {
    if (!same_shape(o)) throw InternalError(std::string("Matrix shape mismatch in ") + op);
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<S> data_;
};

/// A · B
template <class S>
Matrix<S> matmul(const Matrix<S>& a, const Matrix<S>& b) {
  if (a.cols() != b.rows()) throw InternalError("matmul: inner dimension mismatch");
  Matrix<S> c(a.rows(), b.cols());
  const std::size_t n = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    S* crow = c.row(i).data();
    const S* arow = a.row(i).data();
    for (std::size_t k = 0; k < n; ++k) {
      const S aik = arow[k];
      if (aik == S(0)) continue;
      const S* brow = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// A · Bᵀ
template <class S>
Matrix<S> matmul_nt(const Matrix<S>& a, const Matrix<S>& b) {
  if (a.cols() != b.cols()) throw InternalError("matmul_nt: inner dimension mismatch");
  Matrix<S> c(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const S* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const S* brow = b.row(j).data();
      S acc = S(0);
      for (std::size_t k = 0; k < n; ++k) acc += arow[k] * brow[k];
      c(i, j) = acc;
    }
  }
  return c;
}

/// Aᵀ · B
template <class S>
Matrix<S> matmul_tn(const Matrix<S>& a, const Matrix<S>& b) {
  if (a.rows() != b.rows()) throw InternalError("matmul_tn: inner dimension mismatch");
  Matrix<S> c(a.cols(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const S* arow = a.row(k).data();
    const S* brow = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const S aki = arow[i];
      if (aki == S(0)) continue;
      S* crow = c.row(i).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

template <class S>
S frobenius_norm(const Matrix<S>& m) {
  S acc = S(0);
  for (S v : m.data()) acc += v * v;
  return std::sqrt(acc);
}

template <class S>
S max_abs(const Matrix<S>& m) {
  S out = S(0);
  for (S v : m.data()) out = std::max(out, std::abs(v));
  return out;
}

template <class S>
S max_abs_diff(const Matrix<S>& a, const Matrix<S>& b) {
  if (!a.same_shape(b)) throw InternalError("max_abs_diff: shape mismatch");
  S out = S(0);
  for (std::size_t i = 0; i < a.size(); ++i) out = std::max(out, std::abs(a.data()[i] - b.data()[i]));
  return out;
}

template <class S>
S dot(std::span<const S> a, std::span<const S> b) {
  S acc = S(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <class S>
S norm2(std::span<const S> a) {
  return std::sqrt(dot(a, a));
}

/// Columns [first, first+count) of m.
template <class S>
Matrix<S> col_block(const Matrix<S>& m, std::size_t first, std::size_t count) {
  Matrix<S> out(m.rows(), count);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = m(i, first + j);
  return out;
}

/// Rows [first, first+count) of m.
template <class S>
Matrix<S> row_block(const Matrix<S>& m, std::size_t first, std::size_t count) {
  Matrix<S> out(count, m.cols());
  std::copy_n(m.data().begin() + first * m.cols(), count * m.cols(), out.data().begin());
  return out;
}

/// Mean over rows, as a 1×cols matrix.
template <class S>
Matrix<S> column_mean(const Matrix<S>& m) {
  Matrix<S> mu(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) mu(0, j) += m(i, j);
  if (m.rows() > 0) mu *= S(1) / static_cast<S>(m.rows());
  return mu;
}

/// B sequences of T tokens in d channels, stored as a (B·T)×d matrix.
template <class S>
class TokenBatch {
 public:
  TokenBatch() = default;
  TokenBatch(std::size_t batch, std::size_t seq_len, std::size_t dim)
      : batch_(batch), seq_len_(seq_len), flat_(batch * seq_len, dim) {}
  TokenBatch(std::size_t seq_len, Matrix<S> flat) : seq_len_(seq_len), flat_(std::move(flat)) {
    if (seq_len_ == 0 || flat_.rows() % seq_len_ != 0)
      throw InternalError("TokenBatch: row count is not a multiple of seq_len");
    batch_ = flat_.rows() / seq_len_;
  }

  std::size_t batch() const noexcept { return batch_; }
  std::size_t seq_len() const noexcept { return seq_len_; }
  std::size_t dim() const noexcept { return flat_.cols(); }

  S& at(std::size_t b, std::size_t t, std::size_t c) { return flat_(b * seq_len_ + t, c); }
  const S& at(std::size_t b, std::size_t t, std::size_t c) const { return flat_(b * seq_len_ + t, c); }
  std::span<const S> token(std::size_t b, std::size_t t) const { return flat_.row(b * seq_len_ + t); }
  std::span<S> token(std::size_t b, std::size_t t) { return flat_.row(b * seq_len_ + t); }

  Matrix<S> sequence(std::size_t b) const { return row_block(flat_, b * seq_len_, seq_len_); }
  void set_sequence(std::size_t b, const Matrix<S>& x) {
    if (x.rows() != seq_len_ || x.cols() != dim()) throw InternalError("TokenBatch: sequence shape mismatch");
    std::copy(x.data().begin(), x.data().end(), flat_.data().begin() + b * seq_len_ * dim());
  }

  const Matrix<S>& flat() const noexcept { return flat_; }
  Matrix<S>& flat() noexcept { return flat_; }

  bool all_finite() const noexcept { return flat_.all_finite(); }

  friend bool operator==(const TokenBatch& a, const TokenBatch& b) {
    return a.seq_len_ == b.seq_len_ && a.flat_ == b.flat_;
  }

 private:
  std::size_t batch_ = 0;
  std::size_t seq_len_ = 0;
  Matrix<S> flat_;
};

}  // namespace lpfm
