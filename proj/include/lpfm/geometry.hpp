#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lpfm/errors.hpp"
#include "lpfm/matrix.hpp"
#include "lpfm/model.hpp"
#include "lpfm/numeric_core.hpp"
#include "lpfm/rng.hpp"

namespace lpfm {

inline constexpr double kGeometryEps = 1e-12;
inline constexpr double kSnrSentinel = 1e12;

enum class ClassAveraging {
  Unweighted,  // every class counts equally (Ave_c over class means)
  Weighted,    // every token counts equally
};

template <class S>
struct TokenMeans {
  Matrix<S> sequence;  // N×d, one row per sequence
  Matrix<S> cls;       // C×d
  Matrix<S> global;    // 1×d
  std::vector<std::size_t> counts;
};

namespace detail {
inline void check_labels(std::size_t n, std::span<const int> labels, std::size_t num_classes) {
  if (labels.size() != n) throw DataError("geometry: label count does not match sequence count");
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw DataError("geometry: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                      " out of range");
}

template <class S>
double sq_dist(std::span<const S> a, std::span<const S> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    acc += diff * diff;
  }
  return acc;
}
}  // namespace detail

/// μ_{i,c} = Ave_t X, μ_c = Ave_i μ_{i,c}, μ_G = Ave_c μ_c (or the flat token mean when weighted).
template <class S>
TokenMeans<S> token_means(const TokenBatch<S>& x, std::span<const int> labels, std::size_t num_classes,
                          ClassAveraging mode = ClassAveraging::Unweighted) {
  const std::size_t n = x.batch(), T = x.seq_len(), d = x.dim();
  if (n == 0 || T == 0) throw DataError("token_means: empty token set");
  detail::check_labels(n, labels, num_classes);
  TokenMeans<S> m{Matrix<S>(n, d), Matrix<S>(num_classes, d), Matrix<S>(1, d), std::vector<std::size_t>(num_classes)};
  // Means are accumulated as offsets from the first element so constant data
  // reproduces its value exactly and a collapsed set has zero variance.
  std::vector<std::size_t> first(num_classes, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const S ref = x.at(i, 0, j);
      S acc = S(0);
      for (std::size_t t = 0; t < T; ++t) acc += x.at(i, t, j) - ref;
      m.sequence(i, j) = ref + acc / static_cast<S>(T);
    }
    const auto c = static_cast<std::size_t>(labels[i]);
    m.counts[c] += 1;
    if (first[c] == n) first[c] = i;
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (m.counts[c] == 0) throw DataError("token_means: class " + std::to_string(c) + " has no sequences");
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) m.cls(c, j) += m.sequence(i, j) - m.sequence(first[c], j);
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t j = 0; j < d; ++j)
      m.cls(c, j) = m.sequence(first[c], j) + m.cls(c, j) / static_cast<S>(m.counts[c]);
  const Matrix<S>& rows = mode == ClassAveraging::Unweighted ? m.cls : m.sequence;
  for (std::size_t j = 0; j < d; ++j) {
    const S ref = rows(0, j);
    S acc = S(0);
    for (std::size_t r = 0; r < rows.rows(); ++r) acc += rows(r, j) - ref;
    m.global(0, j) = ref + acc / static_cast<S>(rows.rows());
  }
  return m;
}

struct AnovaDecomposition {
  double within_seq = 0, within_class = 0, between_class = 0, total = 0;
  double within_seq_fraction = 0, within_class_fraction = 0, between_class_fraction = 0;
};

/// Token variance decomposition. Unweighted nests the averages per class
/// (Ave_c Ave_i Ave_t); weighted averages every token once. The additive
/// identity holds for both; they coincide for balanced classes.
template <class S>
AnovaDecomposition anova_decompose(const TokenBatch<S>& x, std::span<const int> labels, std::size_t num_classes,
                                   ClassAveraging mode = ClassAveraging::Unweighted) {
  const TokenMeans<S> m = token_means(x, labels, num_classes, mode);
  const std::size_t n = x.batch(), T = x.seq_len(), C = num_classes;
  std::vector<double> seq_acc(C, 0.0), cls_acc(C, 0.0), tot_acc(C, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    double ws = 0.0, tot = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const auto tok = std::span<const S>(x.flat().row(i * T + t));
      ws += detail::sq_dist<S>(tok, m.sequence.row(i));
      tot += detail::sq_dist<S>(tok, m.global.row(0));
    }
    seq_acc[c] += ws / static_cast<double>(T);
    tot_acc[c] += tot / static_cast<double>(T);
    cls_acc[c] += detail::sq_dist<S>(m.sequence.row(i), m.cls.row(c));
  }
  AnovaDecomposition a;
  for (std::size_t c = 0; c < C; ++c) {
    const double between = detail::sq_dist<S>(m.cls.row(c), m.global.row(0));
    if (mode == ClassAveraging::Unweighted) {
      const double nc = static_cast<double>(m.counts[c]);
      a.within_seq += seq_acc[c] / nc;
      a.within_class += cls_acc[c] / nc;
      a.total += tot_acc[c] / nc;
      a.between_class += between;
    } else {
      a.within_seq += seq_acc[c];
      a.within_class += cls_acc[c];
      a.total += tot_acc[c];
      a.between_class += between * static_cast<double>(m.counts[c]);
    }
  }
  const double denom = mode == ClassAveraging::Unweighted ? static_cast<double>(C) : static_cast<double>(n);
  a.within_seq /= denom;
  a.within_class /= denom;
  a.between_class /= denom;
  a.total /= denom;
  if (a.total > 0.0) {
    a.within_seq_fraction = a.within_seq / a.total;
    a.within_class_fraction = a.within_class / a.total;
    a.between_class_fraction = a.between_class / a.total;
  }
  return a;
}

/// Batch mean of the mean pairwise cosine similarity over ordered pairs i≠j.
template <class S>
double cossim(const TokenBatch<S>& x) {
  const std::size_t B = x.batch(), T = x.seq_len();
  if (T < 2) throw DataError("cossim: sequences need at least 2 tokens");
  if (B == 0) throw DataError("cossim: empty batch");
  double total = 0.0;
  std::vector<double> norms(T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) norms[t] = static_cast<double>(norm2<S>(x.flat().row(b * T + t)));
    double acc = 0.0;
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < T; ++j) {
        if (i == j) continue;
        const double dp = static_cast<double>(dot<S>(x.flat().row(b * T + i), x.flat().row(b * T + j)));
        acc += std::clamp(dp / (norms[i] * norms[j] + kGeometryEps), -1.0, 1.0);
      }
    total += acc / static_cast<double>(T * (T - 1));
  }
  return total / static_cast<double>(B);
}

template <class S>
std::vector<double> cossim_per_layer(const std::vector<TokenBatch<S>>& layers) {
  std::vector<double> out;
  for (const auto& l : layers) out.push_back(cossim(l));
  return out;
}

/// Batch mean of ‖Mean(X_b)‖ / (Std(X_b) + ε), Std = sqrt(Ave_t ‖x_t − Mean‖²).
/// A sequence with zero spread and nonzero mean reports the sentinel.
template <class S>
double snr(const TokenBatch<S>& x) {
  const std::size_t B = x.batch(), T = x.seq_len(), d = x.dim();
  if (T < 2) throw DataError("snr: sequences need at least 2 tokens");
  if (B == 0) throw DataError("snr: empty batch");
  double total = 0.0;
  std::vector<double> mean(d);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) mean[j] += static_cast<double>(x.at(b, t, j));
    double mnorm = 0.0;
    for (auto& v : mean) {
      v /= static_cast<double>(T);
      mnorm += v * v;
    }
    mnorm = std::sqrt(mnorm);
    double var = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(x.at(b, t, j)) - mean[j];
        var += diff * diff;
      }
    const double sd = std::sqrt(var / static_cast<double>(T));
    double r = mnorm / (sd + kGeometryEps);
    if (sd == 0.0 && mnorm > 0.0) r = kSnrSentinel;
    total += std::min(r, kSnrSentinel);
  }
  return total / static_cast<double>(B);
}

template <class S>
std::vector<double> snr_per_layer(const std::vector<TokenBatch<S>>& layers) {
  std::vector<double> out;
  for (const auto& l : layers) out.push_back(snr(l));
  return out;
}

/// Flatten to (B·T)×d, centre, project on the top two right singular vectors.
/// Each axis is signed so its largest-magnitude loading is positive.
template <class S>
Matrix<S> pca_project(const TokenBatch<S>& x) {
  if (x.dim() < 2) throw ConfigError("pca_project: need at least 2 channels");
  const Matrix<S>& flat = x.flat();
  if (flat.rows() < 2) throw DataError("pca_project: need at least 2 tokens");
  const Matrix<S> mu = column_mean(flat);
  Matrix<S> centered = flat;
  for (std::size_t i = 0; i < centered.rows(); ++i)
    for (std::size_t j = 0; j < centered.cols(); ++j) centered(i, j) -= mu(0, j);
  const SvdResult<S> svd = thin_svd(centered);
  Matrix<S> axes(2, flat.cols());
  for (std::size_t k = 0; k < 2; ++k) {
    if (k >= svd.vt.rows()) break;  // a single token row: second axis stays zero
    std::size_t arg = 0;
    for (std::size_t j = 1; j < flat.cols(); ++j)
      if (std::abs(svd.vt(k, j)) > std::abs(svd.vt(k, arg))) arg = j;
    const S sign = svd.vt(k, arg) < S(0) ? S(-1) : S(1);
    for (std::size_t j = 0; j < flat.cols(); ++j) axes(k, j) = sign * svd.vt(k, j);
  }
  return matmul_nt(centered, axes);
}

struct NcMetrics {
  double equinorm_cov_means = 0, equinorm_cov_weights = 0;
  double equiangularity_means = 0, equiangularity_weights = 0;
  double self_duality = 0;
  double ncc_mismatch = 0;
};

namespace detail {
/// Rows as vectors: coefficient of variation of their norms (sample std).
template <class S>
std::vector<double> row_norms(const Matrix<S>& v, const char* what) {
  std::vector<double> norms(v.rows());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    norms[i] = static_cast<double>(norm2<S>(v.row(i)));
    if (!(norms[i] > 0.0)) throw DataError(std::string("nc_metrics: zero-norm ") + what + " " + std::to_string(i));
  }
  return norms;
}

inline double coefficient_of_variation(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1.0)) / mean;
}

template <class S>
double equiangularity(const Matrix<S>& v, const std::vector<double>& norms) {
  const std::size_t C = v.rows();
  double acc = 0.0;
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      if (i == j) continue;
      const double c = static_cast<double>(dot<S>(v.row(i), v.row(j))) / (norms[i] * norms[j]);
      acc += std::abs(c + 1.0 / static_cast<double>(C - 1));
    }
  return acc / static_cast<double>(C * (C - 1));
}
}  // namespace detail

/// class_means: C×d (row c = μ_c); weights: C×d classifier; features: N×d with
/// labels and logits (N×C) for the nearest-class-centre agreement.
/// Equinorm and equiangularity of the means use the centred means μ_c − μ_G.
template <class S>
NcMetrics nc_metrics(const Matrix<S>& class_means, const Matrix<S>& weights, const Matrix<S>& features,
                     std::span<const int> labels, const Matrix<S>& logits) {
  const std::size_t C = class_means.rows();
  if (C < 2) throw ConfigError("nc_metrics: need at least 2 classes");
  if (weights.rows() != C || weights.cols() != class_means.cols())
    throw ConfigError("nc_metrics: classifier shape does not match class means");
  if (features.rows() != labels.size() || logits.rows() != features.rows() || logits.cols() != C ||
      features.cols() != class_means.cols())
    throw ConfigError("nc_metrics: feature, label and logit shapes disagree");
  detail::check_labels(features.rows(), labels, C);

  const Matrix<S> mu_g = column_mean(class_means);
  Matrix<S> centered = class_means;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < centered.cols(); ++j) centered(c, j) -= mu_g(0, j);

  NcMetrics nc;
  const auto mn = detail::row_norms(centered, "centred class mean");
  const auto wn = detail::row_norms(weights, "classifier row");
  nc.equinorm_cov_means = detail::coefficient_of_variation(mn);
  nc.equinorm_cov_weights = detail::coefficient_of_variation(wn);
  nc.equiangularity_means = detail::equiangularity(centered, mn);
  nc.equiangularity_weights = detail::equiangularity(weights, wn);

  const double wf = static_cast<double>(frobenius_norm(weights));
  const double mf = static_cast<double>(frobenius_norm(centered));
  double duality = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < centered.cols(); ++j) {
      const double diff = static_cast<double>(weights(c, j)) / wf - static_cast<double>(centered(c, j)) / mf;
      duality += diff * diff;
    }
  nc.self_duality = duality;

  const auto pred = argmax_rows(logits);
  std::size_t mismatch = 0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    std::size_t best = 0;
    double best_d = detail::sq_dist<S>(features.row(i), class_means.row(0));
    for (std::size_t c = 1; c < C; ++c) {
      const double dist = detail::sq_dist<S>(features.row(i), class_means.row(c));
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    mismatch += static_cast<std::size_t>(pred[i]) != best;
  }
  nc.ncc_mismatch = features.rows() == 0 ? 0.0 : static_cast<double>(mismatch) / static_cast<double>(features.rows());
  return nc;
}

/// The 2×3 map √2·[[1/2, −1/2, 0], [0, 0, √3/2]]·(I − 11ᵀ/3).
template <class S>
Matrix<S> simplex_frame() {
  const S r2 = std::sqrt(S(2)), r3 = std::sqrt(S(3));
  const Matrix<S> base{{S(0.5), S(-0.5), S(0)}, {S(0), S(0), r3 / S(2)}};
  Matrix<S> centering = Matrix<S>::identity(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) centering(i, j) -= S(1) / S(3);
  Matrix<S> a = matmul(base, centering);
  return a *= r2;
}

template <class S>
struct SimplexAxes {
  Matrix<S> proj;  // 2×d
  std::array<std::size_t, 3> classes{};
};

/// Sample three classifier rows, normalise them, take U Vᵀ from their SVD and
/// return simplex_frame()·U·Vᵀ. A rank-deficient draw is resampled once.
template <class S>
SimplexAxes<S> simplex_axes(const Matrix<S>& weights, RngState rng) {
  const std::size_t C = weights.rows();
  if (C < 3) throw ConfigError("simplex_project: need at least 3 classes");
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::vector<std::size_t> pool(C);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < 3; ++i) std::swap(pool[i], pool[i + rng.below(C - i)]);
    std::array<std::size_t, 3> picked{pool[0], pool[1], pool[2]};
    Matrix<S> w(3, weights.cols());
    for (std::size_t r = 0; r < 3; ++r) {
      const S n = norm2<S>(weights.row(picked[r]));
      if (!(n > S(0))) continue;
      for (std::size_t j = 0; j < w.cols(); ++j) w(r, j) = weights(picked[r], j) / n;
    }
    const SvdResult<S> svd = thin_svd(w);
    if (svd.s.size() < 3 || !(static_cast<double>(svd.s[2]) > 1e-10 * static_cast<double>(svd.s[0]))) continue;
    return SimplexAxes<S>{matmul(matmul(simplex_frame<S>(), svd.u), svd.vt), picked};
  }
  throw NumericInputError("simplex_project: sampled classifier rows are rank deficient");
}

template <class S>
struct SimplexProjection {
  Matrix<S> coords;  // (B·T)×2
  std::array<std::size_t, 3> classes{};
};

template <class S>
SimplexProjection<S> simplex_project(const TokenBatch<S>& x, const Matrix<S>& weights, RngState rng) {
  if (weights.cols() != x.dim()) throw ConfigError("simplex_project: classifier width does not match tokens");
  const SimplexAxes<S> axes = simplex_axes(weights, rng);
  return SimplexProjection<S>{matmul_nt(x.flat(), axes.proj), axes.classes};
}

struct NtcValues {
  double within_seq_var = 0;
  double within_class_var = 0;
  double between_class_fraction = 0;
  NcMetrics nc;

  /// Exact token collapse: zero residuals and zero NC metrics within `tol`.
  bool holds(double tol) const {
    return within_seq_var <= tol && within_class_var <= tol && nc.equinorm_cov_means <= tol &&
           nc.equiangularity_means <= tol && nc.self_duality <= tol && nc.ncc_mismatch <= tol;
  }
};

template <class S>
NtcValues ntc_report(const TokenBatch<S>& tokens, std::span<const int> labels, std::size_t num_classes,
                     const Matrix<S>& weights, const Matrix<S>& features, const Matrix<S>& logits) {
  const AnovaDecomposition a = anova_decompose(tokens, labels, num_classes);
  const TokenMeans<S> m = token_means(tokens, labels, num_classes);
  return NtcValues{a.within_seq, a.within_class, a.between_class_fraction,
                   nc_metrics(m.cls, weights, features, labels, logits)};
}

struct AnalysisOptions {
  std::size_t pca_classes = 10;  // classes sampled for the PCA scatter
  std::uint64_t sample_seed = 0; // class sampling for both projections
};

template <class S>
struct GeometryReport {
  std::vector<double> cossim;  // per layer, block outputs
  std::vector<double> snr;     // per layer, pre-MLP LayerNorm output
  AnovaDecomposition anova;           // unweighted, final LayerNorm tokens
  AnovaDecomposition anova_weighted;  // count-weighted
  NtcValues ntc;
  double accuracy = 0;
  std::vector<std::size_t> pca_classes;
  Matrix<S> pca_coords;
  std::vector<int> pca_labels;  // one per point
  std::array<std::size_t, 3> simplex_classes{};
  Matrix<S> simplex_coords;
  std::vector<int> simplex_labels;
};

namespace detail {
template <class S>
TokenBatch<S> select_sequences(const TokenBatch<S>& x, std::span<const int> labels, const std::vector<std::size_t>& classes,
                               std::vector<int>& point_labels) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (std::find(classes.begin(), classes.end(), static_cast<std::size_t>(labels[i])) != classes.end())
      keep.push_back(i);
  TokenBatch<S> out(keep.size(), x.seq_len(), x.dim());
  point_labels.clear();
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.set_sequence(k, x.sequence(keep[k]));
    for (std::size_t t = 0; t < x.seq_len(); ++t) point_labels.push_back(labels[keep[k]]);
  }
  return out;
}
}  // namespace detail

/// Eval-mode forward over `inputs` with activation capture, then every metric.
/// Class sampling streams: 1 = PCA classes, 2 = simplex classes.
template <class S>
GeometryReport<S> analyze(const ModelConfig& cfg, const ModelParams<S>& params, const TokenBatch<S>& inputs,
                          std::span<const int> labels, const AnalysisOptions& opt = {}) {
  const std::size_t C = cfg.num_classes;
  ActivationCapture<S> cap;
  const Matrix<S> logits = model_forward(cfg, params, inputs, false, RngState(), 0, &cap);
  GeometryReport<S> r;
  r.cossim = cossim_per_layer(cap.block_outputs);
  r.snr = snr_per_layer(cap.pre_mlp_norm);
  r.anova = anova_decompose(cap.final_norm, labels, C);
  r.anova_weighted = anova_decompose(cap.final_norm, labels, C, ClassAveraging::Weighted);
  r.ntc = ntc_report(cap.final_norm, labels, C, params.head_w, cap.pooled, logits);
  const auto pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
  r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());

  const RngState root(opt.sample_seed);
  std::vector<std::size_t> classes(C);
  std::iota(classes.begin(), classes.end(), 0);
  if (opt.pca_classes < C) {
    RngState pick = root.split(1);
    for (std::size_t i = 0; i < opt.pca_classes; ++i) std::swap(classes[i], classes[i + pick.below(C - i)]);
    classes.resize(opt.pca_classes);
    std::sort(classes.begin(), classes.end());
  }
  r.pca_classes = classes;
  r.pca_coords = pca_project(detail::select_sequences(cap.final_norm, labels, classes, r.pca_labels));
  if (C >= 3) {
    const SimplexAxes<S> axes = simplex_axes(params.head_w, root.split(2));
    r.simplex_classes = axes.classes;
    const std::vector<std::size_t> picked(axes.classes.begin(), axes.classes.end());
    r.simplex_coords = matmul_nt(detail::select_sequences(cap.final_norm, labels, picked, r.simplex_labels).flat(), axes.proj);
  }
  return r;
}

}  // namespace lpfm
