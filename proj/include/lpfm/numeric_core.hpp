#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "lpfm/errors.hpp"
#include "lpfm/matrix.hpp"
#include "lpfm/rng.hpp"

namespace lpfm {

inline constexpr double kDefaultLayerNormEps = 1e-6;

/// Row-wise softmax with per-row max subtraction.
template <class S>
Matrix<S> softmax_rows(const Matrix<S>& m) {
  if (!m.all_finite()) throw NumericInputError("softmax_rows: non-finite input");
  Matrix<S> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    auto o = out.row(i);
    const S mx = *std::max_element(in.begin(), in.end());
    S sum = S(0);
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const S inv = S(1) / sum;
    for (auto& v : o) v *= inv;
  }
  return out;
}

/// Per-row LayerNorm: gamma ⊙ (x − mean) / sqrt(var + eps) + beta, biased variance.
/// gamma and beta are length-d.
template <class S>
Matrix<S> layer_norm(const Matrix<S>& x, std::span<const S> gamma, std::span<const S> beta,
                     S eps = S(kDefaultLayerNormEps)) {
  const std::size_t d = x.cols();
  if (d == 0) throw ConfigError("layer_norm: d must be >= 1");
  if (gamma.size() != d || beta.size() != d) throw ConfigError("layer_norm: gamma/beta length must equal d");
  if (!x.all_finite()) throw NumericInputError("layer_norm: non-finite input");
  Matrix<S> out(x.rows(), d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    S mean = S(0);
    for (S v : in) mean += v;
    mean /= static_cast<S>(d);
    S var = S(0);
    for (S v : in) var += (v - mean) * (v - mean);
    var /= static_cast<S>(d);
    const S denom = std::sqrt(var + eps);
    auto o = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      // A zero-variance row with eps = 0 would divide 0 by 0; it maps to beta.
      const S centered = in[j] - mean;
      o[j] = (denom > S(0) ? gamma[j] * centered / denom : S(0)) + beta[j];
    }
  }
  return out;
}

template <class S>
TokenBatch<S> layer_norm(const TokenBatch<S>& x, std::span<const S> gamma, std::span<const S> beta,
                         S eps = S(kDefaultLayerNormEps)) {
  return TokenBatch<S>(x.seq_len(), layer_norm(x.flat(), gamma, beta, eps));
}

template <class S>
struct SvdResult {
  Matrix<S> u;       // m×k, orthonormal columns
  std::vector<S> s;  // k, nonincreasing
  Matrix<S> vt;      // k×n, orthonormal rows
};

namespace detail {

// One-sided Jacobi on the columns of A (stored as rows of `cols`, n×m with n ≤ m).
template <class S>
SvdResult<S> jacobi_svd_tall(const Matrix<S>& a, int max_sweeps) {
  const std::size_t m = a.rows(), n = a.cols();
  Matrix<S> cols = a.transpose();  // n×m, row j is column j of A
  Matrix<S> v = Matrix<S>::identity(n);  // row j is column j of V
  const S tol = std::numeric_limits<S>::epsilon() * static_cast<S>(std::max<std::size_t>(m, 4));
  double residual = 0.0;
  bool converged = n < 2;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    residual = 0.0;
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto cp = cols.row(p), cq = cols.row(q);
        const S alpha = dot<S>(cp, cp), beta = dot<S>(cq, cq), gamma = dot<S>(cp, cq);
        if (gamma == S(0)) continue;
        const S scale = std::sqrt(alpha * beta);
        const double off = scale > S(0) ? std::abs(static_cast<double>(gamma / scale)) : 0.0;
        residual = std::max(residual, off);
        if (!(std::abs(gamma) > tol * scale)) continue;
        rotated = true;
        const S zeta = (beta - alpha) / (S(2) * gamma);
        const S t = (zeta >= S(0) ? S(1) : S(-1)) / (std::abs(zeta) + std::sqrt(S(1) + zeta * zeta));
        const S c = S(1) / std::sqrt(S(1) + t * t);
        const S s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const S x = cp[i], y = cq[i];
          cp[i] = c * x - s * y;
          cq[i] = s * x + c * y;
        }
        auto vp = v.row(p), vq = v.row(q);
        for (std::size_t i = 0; i < n; ++i) {
          const S x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    if (!rotated) converged = true;
  }
  if (!converged) throw ConvergenceError("thin_svd: Jacobi sweep limit exceeded", residual);

  std::vector<S> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = norm2<S>(cols.row(j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult<S> r{Matrix<S>(m, n), std::vector<S>(n), Matrix<S>(n, n)};
  const S smax = n ? sigma[order[0]] : S(0);
  const S zero_tol = smax * std::numeric_limits<S>::epsilon() * static_cast<S>(std::max(m, n));
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    r.s[k] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) r.vt(k, i) = v(j, i);
    if (sigma[j] > zero_tol && sigma[j] > S(0)) {
      for (std::size_t i = 0; i < m; ++i) r.u(i, k) = cols(j, i) / sigma[j];
      filled[k] = true;
    }
  }
  // Complete U for (numerically) zero singular values with Gram-Schmidt on the standard basis.
  std::size_t candidate = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (filled[k]) continue;
    while (candidate < m) {
      std::vector<S> e(m, S(0));
      e[candidate++] = S(1);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < n; ++o) {
          if (!filled[o]) continue;
          S proj = S(0);
          for (std::size_t i = 0; i < m; ++i) proj += r.u(i, o) * e[i];
          for (std::size_t i = 0; i < m; ++i) e[i] -= proj * r.u(i, o);
        }
      }
      const S nrm = norm2<S>(e);
      if (nrm > S(0.5)) {
        for (std::size_t i = 0; i < m; ++i) r.u(i, k) = e[i] / nrm;
        filled[k] = true;
        break;
      }
    }
    if (!filled[k]) throw InternalError("thin_svd: could not complete orthonormal basis");
  }
  return r;
}

}  // namespace detail

/// Thin SVD M = U diag(S) Vt via one-sided Jacobi on the smaller Gram side.
template <class S>
SvdResult<S> thin_svd(const Matrix<S>& m, int max_sweeps = 80) {
  if (m.rows() == 0 || m.cols() == 0) throw ConfigError("thin_svd: matrix must be non-empty");
  if (!m.all_finite()) throw NumericInputError("thin_svd: non-finite input");
  if (m.rows() >= m.cols()) return detail::jacobi_svd_tall(m, max_sweeps);
  auto t = detail::jacobi_svd_tall(m.transpose(), max_sweeps);
  return SvdResult<S>{t.vt.transpose(), std::move(t.s), t.u.transpose()};
}

/// Entries from N(0, std²) truncated to [−2·std, 2·std] by rejection.
template <class S>
Matrix<S> trunc_normal_init(std::size_t rows, std::size_t cols, double std_dev, RngState rng) {
  if (!(std_dev > 0.0)) throw ConfigError("trunc_normal_init: std must be positive");
  Matrix<S> out(rows, cols);
  for (auto& v : out.data()) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    v = static_cast<S>(z * std_dev);
  }
  return out;
}

/// Exact (erf) GELU and its derivative.
template <class S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
}

template <class S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * std::numbers::pi_v<S>);
  return cdf + x * pdf;
}

}  // namespace lpfm
