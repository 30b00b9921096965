#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lpfm/errors.hpp"
#include "lpfm/matrix.hpp"
#include "lpfm/numeric_core.hpp"
#include "lpfm/rng.hpp"

namespace lpfm {

enum class HeadKind : std::uint8_t { Standard, Laplacian };

inline char head_kind_code(HeadKind k) { return k == HeadKind::Standard ? 'S' : 'L'; }

inline HeadKind head_kind_from_code(char c) {
  if (c == 'S' || c == 's') return HeadKind::Standard;
  if (c == 'L' || c == 'l') return HeadKind::Laplacian;
  throw ConfigError(std::string("unknown head kind '") + c + "'");
}

/// Head kinds for every layer. Uniform-k, Mix-Depth and Interleave are all
/// special cases of this table.
struct HeadAssignment {
  std::vector<std::vector<HeadKind>> per_layer;

  std::size_t depth() const noexcept { return per_layer.size(); }

  void validate(std::size_t depth, std::size_t heads) const {
    if (per_layer.size() != depth)
      throw ConfigError("head assignment has " + std::to_string(per_layer.size()) + " layers, model has " +
                        std::to_string(depth));
    for (std::size_t l = 0; l < per_layer.size(); ++l)
      if (per_layer[l].size() != heads)
        throw ConfigError("head assignment layer " + std::to_string(l) + " lists " +
                          std::to_string(per_layer[l].size()) + " heads, expected " + std::to_string(heads));
  }

  std::size_t laplacian_count() const noexcept {
    std::size_t n = 0;
    for (const auto& layer : per_layer)
      for (auto k : layer) n += k == HeadKind::Laplacian;
    return n;
  }

  /// k Laplacian heads in every layer (the first k slots).
  static HeadAssignment uniform(std::size_t depth, std::size_t heads, std::size_t k) {
    if (k > heads) throw ConfigError("laplacian head count k exceeds heads");
    HeadAssignment a;
    std::vector<HeadKind> layer(heads, HeadKind::Standard);
    for (std::size_t j = 0; j < k; ++j) layer[j] = HeadKind::Laplacian;
    a.per_layer.assign(depth, layer);
    return a;
  }

  /// All-Laplacian blocks for the first floor(depth/2) layers, all-Standard afterwards.
  static HeadAssignment mix_depth(std::size_t depth, std::size_t heads) {
    HeadAssignment a;
    for (std::size_t l = 0; l < depth; ++l)
      a.per_layer.emplace_back(heads, l < depth / 2 ? HeadKind::Laplacian : HeadKind::Standard);
    return a;
  }

  /// Alternating all-Laplacian / all-Standard blocks.
  static HeadAssignment interleave(std::size_t depth, std::size_t heads, bool laplacian_first) {
    HeadAssignment a;
    for (std::size_t l = 0; l < depth; ++l) {
      const bool lap = (l % 2 == 0) == laplacian_first;
      a.per_layer.emplace_back(heads, lap ? HeadKind::Laplacian : HeadKind::Standard);
    }
    return a;
  }

  friend bool operator==(const HeadAssignment&, const HeadAssignment&) = default;
};

/// Counts head evaluations by kind; lets tests confirm which code path ran.
struct HeadTrace {
  std::size_t standard = 0;
  std::size_t laplacian = 0;
  void record(HeadKind k) { (k == HeadKind::Standard ? standard : laplacian) += 1; }
};

/// Attention weights for one layer. T is Matrix<S> for plain evaluation or
/// Var<S> when recorded on a tape.
template <class T>
struct BasicAttentionParams {
  std::vector<T> w_q, w_k, w_v;  // per head, d×d_k
  T w_o;                         // (h·d_k)×d
  std::vector<T> q_gain, k_gain;  // per head, 1×d_k; present only with qk-norm

  std::size_t heads() const noexcept { return w_q.size(); }
  std::size_t head_dim() const { return w_q.empty() ? 0 : w_q.front().cols(); }

  /// f(name, T&, decay) for every tensor, in a fixed order.
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t j = 0; j < w_q.size(); ++j) {
      const std::string hp = prefix + "heads." + std::to_string(j) + ".";
      f(hp + "w_q", w_q[j], true);
      f(hp + "w_k", w_k[j], true);
      f(hp + "w_v", w_v[j], true);
      if (j < q_gain.size()) f(hp + "q_gain", q_gain[j], false);
      if (j < k_gain.size()) f(hp + "k_gain", k_gain[j], false);
    }
    f(prefix + "w_o", w_o, true);
  }
};

template <class T>
struct BasicBlockParams {
  BasicAttentionParams<T> attn;
  T ln1_gamma, ln1_beta;  // 1×d
  T ln2_gamma, ln2_beta;  // 1×d
  T mlp_w1, mlp_b1;       // d×(r·d), 1×(r·d)
  T mlp_w2, mlp_b2;       // (r·d)×d, 1×d

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "norm1.gamma", ln1_gamma, false);
    f(prefix + "norm1.beta", ln1_beta, false);
    attn.visit(prefix + "attn.", f);
    f(prefix + "norm2.gamma", ln2_gamma, false);
    f(prefix + "norm2.beta", ln2_beta, false);
    f(prefix + "mlp.w1", mlp_w1, true);
    f(prefix + "mlp.b1", mlp_b1, false);
    f(prefix + "mlp.w2", mlp_w2, true);
    f(prefix + "mlp.b2", mlp_b2, false);
  }
};

template <class S>
using AttentionParams = BasicAttentionParams<Matrix<S>>;
template <class S>
using BlockParams = BasicBlockParams<Matrix<S>>;

struct BlockConfig {
  double drop_path_p = 0.0;
  bool qk_norm = false;
  /// When false both LayerNorms are replaced by identity pass-through.
  bool pre_norm = true;
  double ln_eps = kDefaultLayerNormEps;
};

inline constexpr double kQkNormEps = 1e-12;

/// Residual-branch multiplier for stochastic depth: 0 when the branch is dropped,
/// 1/(1−p) when kept during training, 1 at evaluation. The decision for
/// (sample, branch) is a pure function of rng.
inline double drop_path_scale(double p, bool training, const RngState& rng, std::size_t sample, int branch) {
  if (!training || p <= 0.0) return 1.0;
  RngState r = rng.split(static_cast<std::uint64_t>(sample) * 2 + static_cast<std::uint64_t>(branch));
  return r.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
}

namespace detail {
template <class S>
Matrix<S> unit_rows_with_gain(const Matrix<S>& m, const Matrix<S>& gain) {
  Matrix<S> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const S n = norm2<S>(m.row(i)) + S(kQkNormEps);
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j) / n * gain(0, j);
  }
  return out;
}

template <class S>
Matrix<S> maybe_norm(const Matrix<S>& x, const Matrix<S>& gamma, const Matrix<S>& beta, const BlockConfig& cfg) {
  if (!cfg.pre_norm) return x;
  return layer_norm<S>(x, gamma.row(0), beta.row(0), static_cast<S>(cfg.ln_eps));
}
}  // namespace detail

/// P = softmax(Q Kᵀ / √d_k) for one sequence x (T×d).
template <class S>
Matrix<S> attention_weights(const Matrix<S>& x, const Matrix<S>& w_q, const Matrix<S>& w_k, std::size_t d_k,
                            const Matrix<S>* q_gain = nullptr, const Matrix<S>* k_gain = nullptr) {
  if (d_k == 0) throw ConfigError("attention_weights: d_k must be >= 1");
  Matrix<S> q = matmul(x, w_q);
  Matrix<S> k = matmul(x, w_k);
  if (q_gain && k_gain) {
    q = detail::unit_rows_with_gain(q, *q_gain);
    k = detail::unit_rows_with_gain(k, *k_gain);
  }
  Matrix<S> logits = matmul_nt(q, k);
  logits *= S(1) / std::sqrt(static_cast<S>(d_k));
  return softmax_rows(logits);
}

/// Standard head: P V. Laplacian head: V − P V, sharing the same P.
template <class S>
Matrix<S> head_forward(HeadKind kind, const Matrix<S>& x, const Matrix<S>& w_q, const Matrix<S>& w_k,
                       const Matrix<S>& w_v, const Matrix<S>* q_gain = nullptr, const Matrix<S>* k_gain = nullptr) {
  const Matrix<S> p = attention_weights(x, w_q, w_k, w_q.cols(), q_gain, k_gain);
  Matrix<S> v = matmul(x, w_v);
  Matrix<S> pv = matmul(p, v);
  if (kind == HeadKind::Standard) return pv;
  return v -= pv;
}

/// Concatenate per-head outputs in assignment order and project with W_o.
template <class S>
Matrix<S> mixed_multi_head(const Matrix<S>& x, const AttentionParams<S>& params, const std::vector<HeadKind>& kinds,
                           bool qk_norm = false, HeadTrace* trace = nullptr) {
  const std::size_t h = params.heads();
  if (kinds.size() != h)
    throw ConfigError("mixed_multi_head: assignment lists " + std::to_string(kinds.size()) + " heads, layer has " +
                      std::to_string(h));
  const std::size_t dk = params.head_dim();
  Matrix<S> concat(x.rows(), h * dk);
  for (std::size_t j = 0; j < h; ++j) {
    const Matrix<S>* qg = qk_norm ? &params.q_gain[j] : nullptr;
    const Matrix<S>* kg = qk_norm ? &params.k_gain[j] : nullptr;
    const Matrix<S> out = head_forward(kinds[j], x, params.w_q[j], params.w_k[j], params.w_v[j], qg, kg);
    if (trace) trace->record(kinds[j]);
    for (std::size_t t = 0; t < x.rows(); ++t)
      for (std::size_t c = 0; c < dk; ++c) concat(t, j * dk + c) = out(t, c);
  }
  return matmul(concat, params.w_o);
}

/// GELU MLP: gelu(x W1 + b1) W2 + b2.
template <class S>
Matrix<S> mlp_forward(const Matrix<S>& x, const BlockParams<S>& p) {
  Matrix<S> hidden = matmul(x, p.mlp_w1);
  for (std::size_t i = 0; i < hidden.rows(); ++i)
    for (std::size_t j = 0; j < hidden.cols(); ++j) hidden(i, j) = gelu(hidden(i, j) + p.mlp_b1(0, j));
  Matrix<S> out = matmul(hidden, p.mlp_w2);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += p.mlp_b2(0, j);
  return out;
}

/// Optional per-block activation sinks.
template <class S>
struct BlockCapture {
  TokenBatch<S>* pre_mlp_norm = nullptr;
};

/// Pre-LN encoder block:
///   x ← x + DropPath(MHA(LN1(x)));  x ← x + DropPath(MLP(LN2(x))).
/// `sample_offset` is the dataset index of sequence 0 so drop decisions do not
/// depend on how samples are grouped into batches.
template <class S>
TokenBatch<S> encoder_block(const TokenBatch<S>& x, const BlockParams<S>& params, const BlockConfig& cfg,
                            const std::vector<HeadKind>& kinds, bool training, const RngState& rng,
                            std::size_t sample_offset = 0, BlockCapture<S> capture = {}, HeadTrace* trace = nullptr) {
  if (!(cfg.drop_path_p >= 0.0 && cfg.drop_path_p < 1.0)) throw ConfigError("drop_path_p must lie in [0, 1)");
  const std::size_t T = x.seq_len(), d = x.dim();
  TokenBatch<S> out(x.batch(), T, d);
  if (capture.pre_mlp_norm) *capture.pre_mlp_norm = TokenBatch<S>(x.batch(), T, d);
  for (std::size_t b = 0; b < x.batch(); ++b) {
    Matrix<S> seq = x.sequence(b);
    const std::size_t sample = sample_offset + b;

    const S s1 = static_cast<S>(drop_path_scale(cfg.drop_path_p, training, rng, sample, 0));
    if (s1 != S(0)) {
      Matrix<S> branch =
          mixed_multi_head(detail::maybe_norm(seq, params.ln1_gamma, params.ln1_beta, cfg), params.attn, kinds,
                           cfg.qk_norm, trace);
      if (s1 != S(1)) branch *= s1;
      seq += branch;
    }

    const Matrix<S> normed = detail::maybe_norm(seq, params.ln2_gamma, params.ln2_beta, cfg);
    if (capture.pre_mlp_norm) capture.pre_mlp_norm->set_sequence(b, normed);
    const S s2 = static_cast<S>(drop_path_scale(cfg.drop_path_p, training, rng, sample, 1));
    if (s2 != S(0)) {
      Matrix<S> branch = mlp_forward(normed, params);
      if (s2 != S(1)) branch *= s2;
      seq += branch;
    }
    out.set_sequence(b, seq);
  }
  return out;
}

}  // namespace lpfm
