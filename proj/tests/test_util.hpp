#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lpfm/attention.hpp"
#include "lpfm/matrix.hpp"
#include "lpfm/rng.hpp"

namespace testutil {

inline lpfm::Matrix<double> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  lpfm::RngState rng(seed);
  lpfm::Matrix<double> m(rows, cols);
  for (auto& v : m.data()) v = scale * rng.normal();
  return m;
}

inline lpfm::TokenBatch<double> random_batch(std::size_t b, std::size_t t, std::size_t d, std::uint64_t seed,
                                             double scale = 1.0) {
  return lpfm::TokenBatch<double>(t, random_matrix(b * t, d, seed, scale));
}

/// Random row-stochastic matrix with strictly positive entries.
inline lpfm::Matrix<double> random_stochastic(std::size_t n, std::uint64_t seed) {
  lpfm::RngState rng(seed);
  lpfm::Matrix<double> p(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += p(i, j) = 0.05 + rng.uniform();
    for (std::size_t j = 0; j < n; ++j) p(i, j) /= sum;
  }
  return p;
}

// Straight-line per-token LayerNorm.
inline lpfm::Matrix<double> ln_oracle(const lpfm::Matrix<double>& x, const lpfm::Matrix<double>& g,
                                      const lpfm::Matrix<double>& b) {
  lpfm::Matrix<double> y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= x.cols();
    for (std::size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= x.cols();
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = g(0, j) * (x(i, j) - mean) / std::sqrt(var + 1e-6) + b(0, j);
  }
  return y;
}

// Attention head computed entry by entry.
inline lpfm::Matrix<double> head_oracle(lpfm::HeadKind kind, const lpfm::Matrix<double>& x,
                                        const lpfm::Matrix<double>& wq, const lpfm::Matrix<double>& wk,
                                        const lpfm::Matrix<double>& wv) {
  const std::size_t T = x.rows(), dk = wq.cols();
  lpfm::Matrix<double> q(T, dk), k(T, dk), v(T, dk), out(T, dk);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < dk; ++c)
      for (std::size_t j = 0; j < x.cols(); ++j) {
        q(t, c) += x(t, j) * wq(j, c);
        k(t, c) += x(t, j) * wk(j, c);
        v(t, c) += x(t, j) * wv(j, c);
      }
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> w(T);
    double z = 0;
    for (std::size_t s = 0; s < T; ++s) {
      double logit = 0;
      for (std::size_t c = 0; c < dk; ++c) logit += q(t, c) * k(s, c);
      w[s] = std::exp(logit / std::sqrt(double(dk)));
      z += w[s];
    }
    for (std::size_t c = 0; c < dk; ++c) {
      double avg = 0;
      for (std::size_t s = 0; s < T; ++s) avg += w[s] / z * v(s, c);
      out(t, c) = kind == lpfm::HeadKind::Standard ? avg : v(t, c) - avg;
    }
  }
  return out;
}


// Pre-norm encoder block for one sequence, entry by entry.
inline lpfm::Matrix<double> block_oracle(const lpfm::Matrix<double>& x, const lpfm::BlockParams<double>& b,
                                         const std::vector<lpfm::HeadKind>& kinds) {
  const std::size_t T = x.rows(), d = x.cols(), h = kinds.size(), dk = b.attn.w_q[0].cols();
  const std::size_t hidden = b.mlp_w1.cols();
  const auto n1 = ln_oracle(x, b.ln1_gamma, b.ln1_beta);
  lpfm::Matrix<double> concat(T, h * dk);
  for (std::size_t j = 0; j < h; ++j) {
    const auto o = head_oracle(kinds[j], n1, b.attn.w_q[j], b.attn.w_k[j], b.attn.w_v[j]);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < dk; ++c) concat(t, j * dk + c) = o(t, c);
  }
  lpfm::Matrix<double> seq = x;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t u = 0; u < h * dk; ++u) seq(t, c) += concat(t, u) * b.attn.w_o(u, c);
  const auto n2 = ln_oracle(seq, b.ln2_gamma, b.ln2_beta);
  lpfm::Matrix<double> out = seq;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c) {
      double acc = b.mlp_b2(0, c);
      for (std::size_t u = 0; u < hidden; ++u) {
        double pre = b.mlp_b1(0, u);
        for (std::size_t j = 0; j < d; ++j) pre += n2(t, j) * b.mlp_w1(j, u);
        acc += 0.5 * pre * (1.0 + std::erf(pre / std::sqrt(2.0))) * b.mlp_w2(u, c);
      }
      out(t, c) += acc;
    }
  return out;
}

}  // namespace testutil
