#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "lpfm/geometry.hpp"
#include "test_util.hpp"

using lpfm::Matrix;
using lpfm::TokenBatch;
using testutil::random_batch;
using testutil::random_matrix;

namespace {

// Centred simplex ETF in the first C coordinates, plus `offset` along coordinate C.
Matrix<double> etf_means(std::size_t C, std::size_t d, double scale, double offset) {
  Matrix<double> m(C, d);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t j = 0; j < C; ++j) m(c, j) = scale * ((c == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(C));
    m(c, C) = offset;
  }
  return m;
}

TokenBatch<double> tokens_at_means(const Matrix<double>& means, std::size_t per_class, std::size_t T,
                                   std::vector<int>& labels) {
  const std::size_t C = means.rows();
  TokenBatch<double> x(C * per_class, T, means.cols());
  labels.clear();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < means.cols(); ++j) x.at(labels.size(), t, j) = means(c, j);
      labels.push_back(static_cast<int>(c));
    }
  return x;
}

std::vector<int> balanced_labels(std::size_t C, std::size_t per_class) {
  std::vector<int> l;
  for (std::size_t i = 0; i < C * per_class; ++i) l.push_back(static_cast<int>(i % C));
  return l;
}

// Direct definitions, one (t, i, c) triple at a time.
struct BruteAnova {
  double ws = 0, wc = 0, bc = 0, tot = 0;
};

BruteAnova brute_anova(const TokenBatch<double>& x, const std::vector<int>& labels, std::size_t C) {
  const std::size_t T = x.seq_len(), d = x.dim();
  auto seq_mean = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t t = 0; t < T; ++t) s += x.at(i, t, j);
    return s / T;
  };
  std::vector<std::vector<double>> cls(C, std::vector<double>(d, 0.0));
  std::vector<double> cnt(C, 0.0), glob(d, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cnt[labels[i]] += 1;
    for (std::size_t j = 0; j < d; ++j) cls[labels[i]][j] += seq_mean(i, j);
  }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < d; ++j) {
      cls[c][j] /= cnt[c];
      glob[j] += cls[c][j] / C;
    }
  BruteAnova a;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (static_cast<std::size_t>(labels[i]) != c) continue;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j) {
          const double v = x.at(i, t, j), mi = seq_mean(i, j);
          a.ws += (v - mi) * (v - mi) / (T * cnt[c] * C);
          a.wc += (mi - cls[c][j]) * (mi - cls[c][j]) / (T * cnt[c] * C);
          a.tot += (v - glob[j]) * (v - glob[j]) / (T * cnt[c] * C);
        }
    }
    for (std::size_t j = 0; j < d; ++j) a.bc += (cls[c][j] - glob[j]) * (cls[c][j] - glob[j]) / C;
  }
  return a;
}

}  // namespace

TEST(TokenMeans, ConstantData) {
  TokenBatch<double> x(1, 4, 3);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 3; ++j) x.at(0, t, j) = 1.5 + j;
  const auto m = lpfm::token_means(x, std::vector<int>{0}, 1);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(m.sequence(0, j), 1.5 + j);
    EXPECT_EQ(m.cls(0, j), 1.5 + j);
    EXPECT_EQ(m.global(0, j), 1.5 + j);
  }
}

TEST(TokenMeans, SymmetricClassesHaveZeroGlobalMean) {
  const auto u = random_matrix(1, 5, 1);
  TokenBatch<double> x(6, 3, 5);
  std::vector<int> labels;
  for (std::size_t i = 0; i < 6; ++i) {
    const double sgn = i % 2 ? -1.0 : 1.0;
    const auto noise = random_matrix(3, 5, 10 + i / 2, 0.3);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t j = 0; j < 5; ++j) x.at(i, t, j) = sgn * (u(0, j) + noise(t, j));
    labels.push_back(static_cast<int>(i % 2));
  }
  const auto m = lpfm::token_means(x, labels, 2);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_LE(std::abs(m.global(0, j)), 1e-10);
}

TEST(TokenMeans, GuardsLabels) {
  const auto x = random_batch(3, 2, 2, 1);
  EXPECT_THROW(lpfm::token_means(x, std::vector<int>{0, 1, 0}, 3), lpfm::DataError);
  EXPECT_THROW(lpfm::token_means(x, std::vector<int>{0, 5, 0}, 2), lpfm::DataError);
  EXPECT_THROW(lpfm::token_means(x, std::vector<int>{0, 1}, 2), lpfm::DataError);
}

TEST(Anova, FullyCollapsed) {
  TokenBatch<double> x(4, 3, 2);
  for (auto& v : x.flat().data()) v = 0.7;
  const auto a = lpfm::anova_decompose(x, balanced_labels(2, 2), 2);
  EXPECT_EQ(a.total, 0.0);
  EXPECT_EQ(a.within_seq, 0.0);
  EXPECT_EQ(a.within_class, 0.0);
  EXPECT_EQ(a.between_class, 0.0);
  EXPECT_EQ(a.within_seq_fraction, 0.0);
  EXPECT_EQ(a.between_class_fraction, 0.0);
}

TEST(Anova, ConstantSequencesHaveNoWithinSequenceVariance) {
  const auto seq = random_matrix(6, 4, 3);
  TokenBatch<double> x(6, 5, 4);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t j = 0; j < 4; ++j) x.at(i, t, j) = seq(i, j);
  const auto a = lpfm::anova_decompose(x, balanced_labels(2, 3), 2);
  EXPECT_EQ(a.within_seq, 0.0);
  EXPECT_GT(a.within_class, 0.0);
  EXPECT_GT(a.between_class, 0.0);
}

TEST(Anova, HandChosenScalarCase) {
  // C=2, N_c=2, T=2, d=1.
  TokenBatch<double> x(4, 2, 1);
  const double v[4][2] = {{1, 3}, {2, 6}, {-1, 0}, {-4, -3}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t t = 0; t < 2; ++t) x.at(i, t, 0) = v[i][t];
  const std::vector<int> labels{0, 0, 1, 1};
  const auto a = lpfm::anova_decompose(x, labels, 2);
  const auto b = brute_anova(x, labels, 2);
  EXPECT_NEAR(a.within_seq, b.ws, 1e-14);
  EXPECT_NEAR(a.within_class, b.wc, 1e-14);
  EXPECT_NEAR(a.between_class, b.bc, 1e-14);
  EXPECT_NEAR(a.total, b.tot, 1e-14);
}

TEST(Anova, MatchesBruteForceAndIdentityIncludingUnbalanced) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    lpfm::RngState rng(s);
    const std::size_t C = 2 + rng.below(4), T = 1 + rng.below(8), d = 1 + rng.below(16);
    std::vector<int> labels;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i) labels.push_back(static_cast<int>(c));
    const auto x = random_batch(labels.size(), T, d, 100 + s, 2.0);
    const auto a = lpfm::anova_decompose(x, labels, C);
    const auto b = brute_anova(x, labels, C);
    EXPECT_NEAR(a.within_seq, b.ws, 1e-10 * b.tot);
    EXPECT_NEAR(a.within_class, b.wc, 1e-10 * b.tot);
    EXPECT_NEAR(a.between_class, b.bc, 1e-10 * b.tot);
    EXPECT_NEAR(a.total, b.tot, 1e-10 * b.tot);
    EXPECT_NEAR(a.within_seq + a.within_class + a.between_class, a.total, 1e-10 * a.total);
    const auto w = lpfm::anova_decompose(x, labels, C, lpfm::ClassAveraging::Weighted);
    EXPECT_NEAR(w.within_seq + w.within_class + w.between_class, w.total, 1e-10 * w.total);
    EXPECT_NEAR(w.within_seq_fraction + w.within_class_fraction + w.between_class_fraction, 1.0, 1e-12);
  }
}

TEST(Anova, WeightedCountsEveryToken) {
  const std::vector<int> labels{0, 0, 0, 1};
  const auto x = random_batch(4, 3, 2, 5);
  const auto w = lpfm::anova_decompose(x, labels, 2, lpfm::ClassAveraging::Weighted);
  double mean[2] = {0, 0}, total = 0;
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t j = 0; j < 2; ++j) mean[j] += x.flat()(r, j) / 12.0;
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t j = 0; j < 2; ++j) total += (x.flat()(r, j) - mean[j]) * (x.flat()(r, j) - mean[j]) / 12.0;
  EXPECT_NEAR(w.total, total, 1e-14);
}

TEST(CosSim, Examples) {
  TokenBatch<double> same(1, 4, 3);
  for (std::size_t t = 0; t < 4; ++t) {
    same.at(0, t, 0) = 2;
    same.at(0, t, 2) = -1;
  }
  EXPECT_NEAR(lpfm::cossim(same), 1.0, 1e-12);
  TokenBatch<double> ortho(1, 2, 2);
  ortho.at(0, 0, 0) = 1;
  ortho.at(0, 1, 1) = 3;
  EXPECT_EQ(lpfm::cossim(ortho), 0.0);
  TokenBatch<double> three(1, 3, 2);
  three.at(0, 0, 0) = 1;
  three.at(0, 1, 0) = 1;
  three.at(0, 2, 0) = -1;
  EXPECT_NEAR(lpfm::cossim(three), (1.0 - 1.0 - 1.0) / 3.0, 1e-12);
  EXPECT_THROW(lpfm::cossim(random_batch(2, 1, 3, 1)), lpfm::DataError);
}

TEST(CosSim, MatchesEigenPairwiseAverage) {
  const auto x = random_batch(3, 5, 4, 9);
  double expected = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    Eigen::MatrixXd m(5, 4);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t j = 0; j < 4; ++j) m(t, j) = x.at(b, t, j);
    m.rowwise().normalize();
    const Eigen::MatrixXd g = m * m.transpose();
    expected += (g.sum() - g.trace()) / 20.0 / 3.0;
  }
  EXPECT_NEAR(lpfm::cossim(x), expected, 1e-12);
}

TEST(Snr, Examples) {
  TokenBatch<double> anti(1, 2, 3);
  for (std::size_t j = 0; j < 3; ++j) {
    anti.at(0, 0, j) = 1.0 + j;
    anti.at(0, 1, j) = -1.0 - j;
  }
  EXPECT_EQ(lpfm::snr(anti), 0.0);
  TokenBatch<double> flat(1, 3, 2);
  for (std::size_t t = 0; t < 3; ++t) flat.at(0, t, 1) = 4.0;
  EXPECT_EQ(lpfm::snr(flat), lpfm::kSnrSentinel);
  EXPECT_EQ(lpfm::snr(TokenBatch<double>(1, 3, 2)), 0.0);
}

TEST(Snr, MatchesDirectFormula) {
  const auto x = random_batch(4, 6, 5, 11);
  double expected = 0;
  for (std::size_t b = 0; b < 4; ++b) {
    // Std² = Ave‖x‖² − ‖Mean‖².
    const Matrix<double> seq = x.sequence(b);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(5);
    double sq = 0;
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t j = 0; j < 5; ++j) {
        mean(j) += seq(t, j) / 6.0;
        sq += seq(t, j) * seq(t, j) / 6.0;
      }
    expected += mean.norm() / (std::sqrt(sq - mean.squaredNorm()) + 1e-12) / 4.0;
  }
  EXPECT_NEAR(lpfm::snr(x), expected, 1e-12);
}

TEST(Pca, VariancesMatchCovarianceEigenvalues) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto x = random_batch(5, 6, 7, s);
    // Anisotropic scales so the top two eigenvalues are well separated.
    for (std::size_t r = 0; r < x.flat().rows(); ++r)
      for (std::size_t j = 0; j < 7; ++j) x.flat()(r, j) *= 1.0 + 0.7 * j + 0.1 * s;
    const auto coords = lpfm::pca_project(x);
    const std::size_t n = coords.rows();
    Eigen::MatrixXd X(n, 7);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < 7; ++j) X(r, j) = x.flat()(r, j);
    const Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const auto ev = es.eigenvalues();
    double m0 = 0, m1 = 0, v0 = 0, v1 = 0;
    for (std::size_t r = 0; r < n; ++r) {
      m0 += coords(r, 0) / n;
      m1 += coords(r, 1) / n;
      v0 += coords(r, 0) * coords(r, 0) / n;
      v1 += coords(r, 1) * coords(r, 1) / n;
    }
    EXPECT_LE(std::abs(m0), 1e-10);
    EXPECT_LE(std::abs(m1), 1e-10);
    EXPECT_NEAR(v0, ev(6), 1e-8 * ev(6));
    EXPECT_NEAR(v1, ev(5), 1e-8 * ev(6));
  }
}

TEST(Pca, RankOneInputHasFlatSecondAxis) {
  const auto dir = random_matrix(1, 4, 1);
  const auto t = random_matrix(12, 1, 2, 3.0);
  TokenBatch<double> x(3, 4, 4);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t j = 0; j < 4; ++j) x.flat()(r, j) = 0.5 + t(r, 0) * dir(0, j);
  const auto c = lpfm::pca_project(x);
  for (std::size_t r = 0; r < 12; ++r) EXPECT_LE(std::abs(c(r, 1)), 1e-8);
}

TEST(Pca, RotationOnlyFlipsSigns) {
  const auto x = random_batch(4, 5, 3, 21);
  Eigen::Matrix3d q = Eigen::Quaterniond(0.3, -0.5, 0.2, 0.7).normalized().toRotationMatrix();
  TokenBatch<double> y = x;
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 3; ++k) acc += x.flat()(r, k) * q(k, j);
      y.flat()(r, j) = acc;
    }
  const auto a = lpfm::pca_project(x), b = lpfm::pca_project(y);
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(std::abs(a(r, k)), std::abs(b(r, k)), 1e-10);
  EXPECT_THROW(lpfm::pca_project(random_batch(2, 2, 1, 1)), lpfm::ConfigError);
  EXPECT_THROW(lpfm::pca_project(random_batch(1, 1, 3, 1)), lpfm::DataError);
}

TEST(NcMetrics, SimplexEtfIsExact) {
  for (std::size_t C : {3u, 4u, 5u}) {
    const auto means = etf_means(C, C + 2, 2.5, 1.3);
    Matrix<double> w = etf_means(C, C + 2, 1.0, 0.0);
    std::vector<int> labels;
    const auto feats = tokens_at_means(means, 2, 1, labels).flat();
    const auto logits = lpfm::matmul_nt(feats, w);
    const auto nc = lpfm::nc_metrics(means, w, feats, labels, logits);
    EXPECT_LE(nc.equinorm_cov_means, 1e-9);
    EXPECT_LE(nc.equiangularity_means, 1e-9);
    EXPECT_LE(nc.equinorm_cov_weights, 1e-9);
    EXPECT_LE(nc.equiangularity_weights, 1e-9);
    EXPECT_LE(nc.self_duality, 1e-12);
    EXPECT_EQ(nc.ncc_mismatch, 0.0);
    w *= 3.7;
    EXPECT_LE(lpfm::nc_metrics(means, w, feats, labels, logits).self_duality, 1e-12);
  }
}

TEST(NcMetrics, PerturbedMeansAreNotCollapsed) {
  auto means = etf_means(4, 6, 1.0, 0.0);
  means(0, 0) *= 2.0;
  const auto w = random_matrix(4, 6, 3);
  const auto feats = random_matrix(8, 6, 4);
  const auto nc = lpfm::nc_metrics(means, w, feats, balanced_labels(4, 2), random_matrix(8, 4, 5));
  EXPECT_GT(nc.equinorm_cov_means, 0.01);
  EXPECT_GT(nc.equiangularity_means, 0.01);
  EXPECT_GT(nc.self_duality, 0.01);
}

TEST(NcMetrics, NearestCentreDisagreementCounts) {
  const auto means = etf_means(3, 4, 1.0, 0.0);
  const Matrix<double> feats{{1, 0, 0, 0}, {0, 1, 0, 0}};
  Matrix<double> logits(2, 3);
  logits(0, 0) = 1;  // agrees with nearest centre 0
  logits(1, 2) = 1;  // nearest centre is 1
  EXPECT_DOUBLE_EQ(lpfm::nc_metrics(means, means, feats, std::vector<int>{0, 1}, logits).ncc_mismatch, 0.5);
  EXPECT_THROW(lpfm::nc_metrics(means, Matrix<double>(2, 4), feats, std::vector<int>{0, 1}, logits),
               lpfm::ConfigError);
}

TEST(Simplex, FrameMapsBasisToEquilateralTriangle) {
  const auto a = lpfm::simplex_frame<double>();
  const double r2 = std::sqrt(2.0), r6 = std::sqrt(6.0);
  const double expected[3][2] = {{r2 / 2, -r6 / 6}, {-r2 / 2, -r6 / 6}, {0, r6 / 3}};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(a(0, i), expected[i][0], 1e-12);
    EXPECT_NEAR(a(1, i), expected[i][1], 1e-12);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t j = (i + 1) % 3;
    EXPECT_NEAR(std::hypot(a(0, i) - a(0, j), a(1, i) - a(1, j)), r2, 1e-12);
  }
  EXPECT_NEAR(a(0, 0) + a(0, 1) + a(0, 2), 0.0, 1e-15);
  EXPECT_NEAR(a(1, 0) + a(1, 1) + a(1, 2), 0.0, 1e-15);
}

TEST(Simplex, CollapsedTokensLandOnVertices) {
  // Orthogonal classifier rows of unequal length; tokens sit on the normalised rows.
  Eigen::MatrixXd g(8, 5);
  const auto r = random_matrix(8, 5, 3);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 5; ++j) g(i, j) = r(i, j);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(8, 5);
  Matrix<double> w(5, 8);
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t j = 0; j < 8; ++j) w(c, j) = (1.0 + c) * q(j, c);
  const auto axes = lpfm::simplex_axes(w, lpfm::RngState(4));
  const auto a = lpfm::simplex_frame<double>();
  for (std::size_t v = 0; v < 3; ++v) {
    TokenBatch<double> tok(1, 1, 8);
    for (std::size_t j = 0; j < 8; ++j) tok.at(0, 0, j) = q(j, axes.classes[v]);
    const auto img = lpfm::matmul_nt(tok.flat(), axes.proj);
    EXPECT_NEAR(img(0, 0), a(0, v), 1e-12);
    EXPECT_NEAR(img(0, 1), a(1, v), 1e-12);
  }
  EXPECT_NE(axes.classes[0], axes.classes[1]);
  EXPECT_NE(axes.classes[1], axes.classes[2]);
  EXPECT_NE(axes.classes[0], axes.classes[2]);
}

TEST(Simplex, ErrorsOnTooFewOrDegenerateRows) {
  EXPECT_THROW(lpfm::simplex_axes(random_matrix(2, 4, 1), lpfm::RngState()), lpfm::ConfigError);
  Matrix<double> parallel(3, 4);
  for (std::size_t c = 0; c < 3; ++c) parallel(c, 0) = 1.0 + c;
  EXPECT_THROW(lpfm::simplex_axes(parallel, lpfm::RngState()), lpfm::NumericInputError);
}

TEST(Ntc, ExactFixedPoint) {
  const auto means = etf_means(4, 6, 2.0, 0.0);
  std::vector<int> labels;
  const auto tokens = tokens_at_means(means, 3, 5, labels);
  const auto feats = lpfm::token_means(tokens, labels, 4).sequence;
  const auto v = lpfm::ntc_report(tokens, labels, 4, means, feats, lpfm::matmul_nt(feats, means));
  EXPECT_LE(v.within_seq_var, 1e-10);
  EXPECT_LE(v.within_class_var, 1e-10);
  EXPECT_NEAR(v.between_class_fraction, 1.0, 1e-12);
  EXPECT_TRUE(v.holds(1e-9));
}

TEST(Ntc, RandomFeaturesAreNotCollapsed) {
  const auto labels = balanced_labels(3, 4);
  const auto tokens = random_batch(12, 5, 6, 8);
  const auto feats = lpfm::token_means(tokens, labels, 3).sequence;
  const auto v = lpfm::ntc_report(tokens, labels, 3, random_matrix(3, 6, 9), feats, random_matrix(12, 3, 10));
  EXPECT_LT(v.between_class_fraction, 1.0);
  EXPECT_FALSE(v.holds(1e-9));
}

TEST(Analyze, ReportIsConsistentWithCaptures) {
  lpfm::ModelConfig cfg;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.head_dim = 4;
  cfg.num_classes = 4;
  cfg.seq_len = 5;
  cfg.token_dim = 3;
  cfg.init_std = 0.3;
  cfg.assignment = lpfm::HeadAssignment::uniform(2, 2, 1);
  const auto p = lpfm::init_params<double>(cfg, lpfm::RngState(1));
  const auto x = random_batch(12, 5, 3, 2);
  const auto labels = balanced_labels(4, 3);
  lpfm::AnalysisOptions opt;
  opt.pca_classes = 2;
  const auto r = lpfm::analyze(cfg, p, x, labels, opt);
  lpfm::ActivationCapture<double> cap;
  const auto logits = lpfm::model_forward(cfg, p, x, false, lpfm::RngState(), 0, &cap);
  ASSERT_EQ(r.cossim.size(), 2u);
  ASSERT_EQ(r.snr.size(), 2u);
  EXPECT_EQ(r.cossim[1], lpfm::cossim(cap.block_outputs[1]));
  EXPECT_EQ(r.snr[0], lpfm::snr(cap.pre_mlp_norm[0]));
  EXPECT_EQ(r.anova.within_seq, lpfm::anova_decompose(cap.final_norm, labels, 4).within_seq);
  ASSERT_EQ(r.pca_classes.size(), 2u);
  EXPECT_EQ(r.pca_coords.rows(), 2u * 3u * 5u);
  EXPECT_EQ(r.pca_labels.size(), r.pca_coords.rows());
  EXPECT_EQ(r.simplex_coords.rows(), 3u * 3u * 5u);
  const auto pred = lpfm::argmax_rows(logits);
  double acc = 0;
  for (std::size_t i = 0; i < 12; ++i) acc += (pred[i] == labels[i]) / 12.0;
  EXPECT_NEAR(r.accuracy, acc, 1e-15);
  const auto again = lpfm::analyze(cfg, p, x, labels, opt);
  EXPECT_TRUE(again.pca_coords == r.pca_coords);
  EXPECT_TRUE(again.simplex_coords == r.simplex_coords);
}
