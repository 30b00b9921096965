#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lpfm/attention.hpp"
#include "lpfm/errors.hpp"
#include "lpfm/geometry.hpp"
#include "lpfm/matrix.hpp"
#include "lpfm/numeric_core.hpp"
#include "lpfm/rng.hpp"

namespace lpfm {

inline constexpr double kStochasticTol = 1e-12;

/// Largest |row sum − 1| of P; negative entries count as infinite deviation.
template <class S>
double stochastic_deviation(const Matrix<S>& p) {
  double worst = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      if (p(i, j) < S(0)) return INFINITY;
      sum += static_cast<double>(p(i, j));
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

/// L = I − P for row-stochastic P.
template <class S>
Matrix<S> graph_laplacian(const Matrix<S>& p) {
  if (p.rows() != p.cols() || p.empty()) throw NumericInputError("graph_laplacian: P must be square and nonempty");
  if (!p.all_finite()) throw NumericInputError("graph_laplacian: non-finite entry in P");
  const double dev = stochastic_deviation(p);
  if (dev > kStochasticTol)
    throw NumericInputError("graph_laplacian: P is not row-stochastic (max row-sum deviation " + std::to_string(dev) +
                            ")");
  Matrix<S> l = Matrix<S>::identity(p.rows());
  return l -= p;
}

/// Explicit Euler step of dX/dt = −(I − P)X. At dt = 1 this is P·X.
template <class S>
Matrix<S> heat_step(const Matrix<S>& x, const Matrix<S>& p, double dt) {
  if (!(dt > 0.0 && dt <= 1.0)) throw ConfigError("heat_step: dt must lie in (0, 1]");
  if (p.rows() != p.cols() || p.cols() != x.rows()) throw ConfigError("heat_step: P must be T×T for T×d input");
  Matrix<S> px = matmul(p, x);
  if (dt == 1.0) return px;
  Matrix<S> out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) -= static_cast<S>(dt) * (x(i, j) - px(i, j));
  return out;
}

/// Largest distance of a row from the row mean.
template <class S>
double row_spread(const Matrix<S>& x) {
  const Matrix<S> mu = column_mean(x);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) worst = std::max(worst, std::sqrt(detail::sq_dist<S>(x.row(i), mu.row(0))));
  return worst;
}

enum class PMode { Recomputed, Frozen };

struct DiffusionConfig {
  std::size_t seq_len = 8;
  std::size_t dim = 8;
  std::size_t steps = 200;
  double dt = 1.0;
  double weight_std = 0.5;  // query/key weights; larger means sharper attention
  PMode mode = PMode::Recomputed;
  std::uint64_t seed = 0;
};

struct TrajectoryPoint {
  std::size_t step = 0;
  double row_spread = 0;
  double cossim = 0;
};

template <class S>
struct Trajectory {
  std::vector<TrajectoryPoint> points;  // step 0 is the initial state
  Matrix<S> final_state;
};

/// Heat diffusion driven by attention weights from fixed query/key maps.
template <class S>
Trajectory<S> diffusion_trajectory(Matrix<S> x, const Matrix<S>& w_q, const Matrix<S>& w_k, std::size_t steps,
                                   double dt, PMode mode) {
  Trajectory<S> tr;
  auto record = [&](std::size_t step) {
    tr.points.push_back({step, row_spread(x), x.rows() >= 2 ? cossim(TokenBatch<S>(x.rows(), x)) : 1.0});
  };
  record(0);
  Matrix<S> p = attention_weights(x, w_q, w_k, w_q.cols());
  for (std::size_t s = 1; s <= steps; ++s) {
    if (mode == PMode::Recomputed && s > 1) p = attention_weights(x, w_q, w_k, w_q.cols());
    x = heat_step(x, p, dt);
    record(s);
  }
  tr.final_state = std::move(x);
  return tr;
}

template <class S>
Trajectory<S> diffusion_trajectory(const DiffusionConfig& cfg) {
  const RngState root(cfg.seed);
  Matrix<S> x = trunc_normal_init<S>(cfg.seq_len, cfg.dim, 1.0, root.split(1));
  const auto w_q = trunc_normal_init<S>(cfg.dim, cfg.dim, cfg.weight_std, root.split(2));
  const auto w_k = trunc_normal_init<S>(cfg.dim, cfg.dim, cfg.weight_std, root.split(3));
  return diffusion_trajectory(std::move(x), w_q, w_k, cfg.steps, cfg.dt, cfg.mode);
}

/// Single-head Laplacian block with W_V = I, W_o = sign·I, zero MLP and no
/// LayerNorm. With sign = −1 its output is one heat step X ← P X.
template <class S>
BlockParams<S> diffusion_block(std::size_t d, const RngState& rng, double weight_std = 0.5, S sign = S(-1)) {
  BlockParams<S> b;
  b.attn.w_q = {trunc_normal_init<S>(d, d, weight_std, rng.split(1))};
  b.attn.w_k = {trunc_normal_init<S>(d, d, weight_std, rng.split(2))};
  b.attn.w_v = {Matrix<S>::identity(d)};
  b.attn.w_o = Matrix<S>::identity(d);
  b.attn.w_o *= sign;
  b.ln1_gamma = Matrix<S>(1, d, S(1));
  b.ln1_beta = Matrix<S>(1, d);
  b.ln2_gamma = Matrix<S>(1, d, S(1));
  b.ln2_beta = Matrix<S>(1, d);
  b.mlp_w1 = Matrix<S>(d, 4 * d);
  b.mlp_b1 = Matrix<S>(1, 4 * d);
  b.mlp_w2 = Matrix<S>(4 * d, d);
  b.mlp_b2 = Matrix<S>(1, d);
  return b;
}

inline BlockConfig diffusion_block_config() {
  BlockConfig c;
  c.pre_norm = false;
  c.drop_path_p = 0.0;
  return c;
}

/// max |block(X) − heat_step(X, P, 1)| over `inputs` random sequences, with P
/// taken from the block's own attention weights.
template <class S>
double equivalence_check(std::uint64_t seed, std::size_t inputs = 20, std::size_t seq_len = 4, std::size_t dim = 4,
                         S sign = S(-1)) {
  const RngState root(seed);
  const BlockParams<S> block = diffusion_block<S>(dim, root.split(1), 0.5, sign);
  const std::vector<HeadKind> kinds{HeadKind::Laplacian};
  double worst = 0.0;
  for (std::size_t n = 0; n < inputs; ++n) {
    const Matrix<S> x = trunc_normal_init<S>(seq_len, dim, 1.0, root.split(100 + n));
    const TokenBatch<S> out =
        encoder_block(TokenBatch<S>(seq_len, x), block, diffusion_block_config(), kinds, false, RngState());
    const Matrix<S> p = attention_weights(x, block.attn.w_q[0], block.attn.w_k[0], dim);
    worst = std::max(worst, static_cast<double>(max_abs_diff(out.flat(), heat_step(x, p, 1.0))));
  }
  return worst;
}

/// Negate every W_V and W_o together; returns the
/// largest output difference (exactly 0 when the sign is absorbed).
template <class S>
double sign_absorption_check(const TokenBatch<S>& x, const BlockParams<S>& block, const BlockConfig& cfg,
                             const std::vector<HeadKind>& kinds) {
  BlockParams<S> flipped = block;
  for (auto& w : flipped.attn.w_v) w *= S(-1);
  flipped.attn.w_o *= S(-1);
  const auto a = encoder_block(x, block, cfg, kinds, false, RngState());
  const auto b = encoder_block(x, flipped, cfg, kinds, false, RngState());
  return static_cast<double>(max_abs_diff(a.flat(), b.flat()));
}

}  // namespace lpfm
