// Runs every acceptance criterion once and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unistd.h>

#include "lpfm/lpfm.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using lpfm::HeadKind;
using lpfm::Matrix;
using lpfm::TokenBatch;
using testutil::random_matrix;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lpfm_accept_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

Outcome anova_identity() {
  double worst = 0.0;
  lpfm::RngState rng(2024);
  for (int n = 0; n < 50; ++n) {
    const std::size_t C = 2 + rng.below(4), Nc = 1 + rng.below(8), T = 1 + rng.below(8), d = 1 + rng.below(16);
    std::vector<int> labels;
    for (std::size_t i = 0; i < C * Nc; ++i) labels.push_back(static_cast<int>(i % C));
    const auto x = testutil::random_batch(C * Nc, T, d, 5000 + n, 0.5 + rng.uniform() * 3.0);
    const auto a = lpfm::anova_decompose(x, labels, C);
    worst = std::max(worst, std::abs(a.total - (a.between_class + a.within_class + a.within_seq)) / a.total);
  }
  return {worst <= 1e-6, fmt("max |Total - sum| / Total = %.3g over 50 sets", worst)};
}

Outcome gradient_correctness() {
  const auto cfg = lpfm::gradcheck_model_config();
  double worst = 0.0;
  std::string name;
  const auto params = lpfm::init_params<double>(cfg, lpfm::RngState(77));
  lpfm::LabeledDataset<double> batch;
  batch.num_classes = cfg.num_classes;
  batch.inputs = testutil::random_batch(6, cfg.seq_len, cfg.token_dim, 78);
  batch.labels = {0, 1, 2, 2, 1, 0};
  std::size_t tensors = 0;
  for (const auto& t : lpfm::gradient_check(cfg, params, batch)) {
    ++tensors;
    if (t.rel_error >= worst) {
      worst = t.rel_error;
      name = t.name;
    }
  }
  return {worst <= 1e-4, fmt("%.0f tensors, ", static_cast<double>(tensors)) + fmt("worst relative error %.3g", worst) +
                             " (" + name + ")"};
}

Outcome diffusion_equivalence() {
  const double dev = lpfm::equivalence_check<double>(31, 20, 4, 4);
  double absorb = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto block = lpfm::diffusion_block<double>(4, lpfm::RngState(s), 0.5, -1.0);
    block.attn.w_v[0] = random_matrix(4, 4, 90 + s);
    block.mlp_w1 = random_matrix(4, 16, 95 + s, 0.3);
    const auto x = testutil::random_batch(3, 4, 4, 99 + s);
    absorb = std::max(absorb, lpfm::sign_absorption_check(x, block, lpfm::BlockConfig{}, {HeadKind::Laplacian}));
  }
  return {dev <= 1e-12 && absorb == 0.0,
          fmt("block vs heat step deviation %.3g over 20 inputs; ", dev) + fmt("sign absorption difference %.3g", absorb)};
}

Outcome constant_annihilation() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    lpfm::RngState rng(10000 + s);
    const std::size_t T = 1 + rng.below(8), d = 1 + rng.below(16), dk = 1 + rng.below(8);
    const auto v = random_matrix(1, d, 20000 + s, 3.0);
    Matrix<double> x(T, d);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) x(t, j) = v(0, j);
    const auto out = lpfm::head_forward(HeadKind::Laplacian, x, random_matrix(d, dk, 30000 + s),
                                        random_matrix(d, dk, 40000 + s), random_matrix(d, dk, 50000 + s));
    for (double e : out.data()) worst = std::max(worst, std::abs(e));
  }
  return {worst <= 1e-12, fmt("max |head output| %.3g over 100 parameter draws", worst)};
}

Outcome nc_oracles() {
  const std::size_t C = 4, d = 7;
  Matrix<double> means(C, d), w(C, d);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t j = 0; j < C; ++j) w(c, j) = (c == j ? 1.0 : 0.0) - 1.0 / C;
    for (std::size_t j = 0; j < C; ++j) means(c, j) = 2.0 * w(c, j);
    means(c, C) = 0.8;  // common offset, removed by centring
  }
  const Matrix<double> feats = means;
  const std::vector<int> labels{0, 1, 2, 3};
  const auto nc = lpfm::nc_metrics(means, w, feats, labels, lpfm::matmul_nt(feats, w));
  const auto a = lpfm::simplex_frame<double>();
  double side_err = 0.0, vert_err = 0.0;
  const double r2 = std::sqrt(2.0), r6 = std::sqrt(6.0);
  const double vert[3][2] = {{r2 / 2, -r6 / 6}, {-r2 / 2, -r6 / 6}, {0, r6 / 3}};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t j = (i + 1) % 3;
    side_err = std::max(side_err, std::abs(std::hypot(a(0, i) - a(0, j), a(1, i) - a(1, j)) - r2));
    vert_err = std::max({vert_err, std::abs(a(0, i) - vert[i][0]), std::abs(a(1, i) - vert[i][1])});
  }
  const bool ok = nc.equinorm_cov_means <= 1e-9 && nc.equiangularity_means <= 1e-9 && nc.self_duality <= 1e-12 &&
                  nc.ncc_mismatch == 0.0 && side_err <= 1e-12 && vert_err <= 1e-12;
  return {ok, fmt("equinorm %.2g, ", nc.equinorm_cov_means) + fmt("equiangularity %.2g, ", nc.equiangularity_means) +
                  fmt("self-duality %.2g, ", nc.self_duality) + fmt("ncc %.2g, ", nc.ncc_mismatch) +
                  fmt("triangle side error %.2g, ", side_err) + fmt("vertex error %.2g", vert_err)};
}

Outcome pca_oracle() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    lpfm::RngState rng(600 + s);
    const std::size_t B = 2 + rng.below(6), T = 2 + rng.below(7), d = 2 + rng.below(12);
    auto x = testutil::random_batch(B, T, d, 700 + s);
    for (std::size_t r = 0; r < B * T; ++r)
      for (std::size_t j = 0; j < d; ++j) x.flat()(r, j) *= 0.5 + 0.4 * static_cast<double>(j);
    const auto coords = lpfm::pca_project(x);
    const std::size_t n = B * T;
    Eigen::MatrixXd X(n, d);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) X(r, j) = x.flat()(r, j);
    const Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
    const Eigen::VectorXd ev =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(centered.transpose() * centered / static_cast<double>(n))
            .eigenvalues();
    for (std::size_t k = 0; k < 2; ++k) {
      double var = 0.0;
      for (std::size_t r = 0; r < n; ++r) var += coords(r, k) * coords(r, k) / static_cast<double>(n);
      worst = std::max(worst, std::abs(var - ev(static_cast<Eigen::Index>(d - 1 - k))));
    }
  }
  return {worst <= 1e-8, fmt("max |projected variance - eigenvalue| %.3g over 20 batches", worst)};
}

Outcome desk_scale() {
  lpfm::ExperimentConfig cfg = lpfm::load_config(std::string(LPFM_CONFIG_DIR) + "/desk_scale.json");
  const fs::path out = scratch("desk");
  cfg.output.dir = out.string();
  cfg.output.formats = {"json"};
  cfg.sweep.laplacian_heads = {0, cfg.model.heads};
  cfg.sweep.drop_path = {0.0};
  const auto res = lpfm::run_experiment(cfg);
  if (res.failures > 0) return {false, "a training run failed: " + res.results.front().error};
  const lpfm::SummaryRow* r0 = nullptr;
  const lpfm::SummaryRow* rk = nullptr;
  for (const auto& r : res.summary) (r.k == 0 ? r0 : rk) = &r;
  if (!r0 || !rk) return {false, "summary is missing a row"};
  const bool a = rk->within_seq_fraction <= r0->within_seq_fraction - 0.05;
  const bool b = rk->last_cossim > r0->last_cossim;
  const bool c = rk->last_snr > r0->last_snr;
  const bool d = rk->equiangularity <= r0->equiangularity + 0.02;
  const bool e = rk->acc_mean >= r0->acc_mean - 0.01;
  auto mark = [](bool ok) { return ok ? "ok" : "FAIL"; };
  char buf[640];
  std::snprintf(buf, sizeof buf,
                "%zu seeds; (a) within-seq frac %.4f -> %.4f %s; (b) cossim %.4f -> %.4f %s; (c) snr %.4f -> %.4f %s; "
                "(d) equiangularity %.4f -> %.4f %s; (e) acc %.4f -> %.4f %s",
                r0->runs, r0->within_seq_fraction, rk->within_seq_fraction, mark(a), r0->last_cossim, rk->last_cossim,
                mark(b), r0->last_snr, rk->last_snr, mark(c), r0->equiangularity, rk->equiangularity, mark(d),
                r0->acc_mean, rk->acc_mean, mark(e));
  fs::remove_all(out);
  return {a && b && c && d && e, buf};
}

Outcome heat_collapse() {
  std::size_t worst_steps = 0;
  double worst_spread = 0.0;
  for (std::size_t T = 2; T <= 8; ++T)
    for (std::uint64_t s = 0; s < 5; ++s) {
      Matrix<double> p = testutil::random_stochastic(T, 100 * T + s);
      for (auto& v : p.data()) v = 0.25 / static_cast<double>(T) + 0.75 * v;
      Matrix<double> x = random_matrix(T, 6, 200 * T + s, 4.0);
      std::size_t steps = 0;
      while (lpfm::row_spread(x) > 1e-8 && steps < 200) {
        x = lpfm::heat_step(x, p, 1.0);
        ++steps;
      }
      worst_steps = std::max(worst_steps, steps);
      worst_spread = std::max(worst_spread, lpfm::row_spread(x));
    }
  return {worst_spread <= 1e-8,
          fmt("35 examples with T in [2, 8]; worst final spread %.3g, ", worst_spread) +
              fmt("at most %.0f steps", static_cast<double>(worst_steps))};
}

Outcome determinism() {
  ::setenv("LPFM_DETERMINISTIC", "1", 1);
  lpfm::ExperimentConfig cfg = lpfm::config_from_json(lpfm::json::parse(R"({
    "model": {"depth": 2, "heads": 2, "dim": 8, "head_dim": 4, "num_classes": 3, "seq_len": 4, "token_dim": 5},
    "train": {"epochs": 3, "batch_size": 5},
    "data": {"kind": "synthetic",
             "synthetic": {"classes": 3, "per_class": 6, "test_per_class": 3, "seq_len": 4, "dim": 5, "seed": 9}},
    "sweep": {"laplacian_heads": [0, 1, 2], "drop_path": [0.0, 0.1], "seeds": [0, 1]},
    "output": {"formats": ["json", "csv"]},
    "workers": 4
  })"));
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  cfg.output.dir = a.string();
  lpfm::run_experiment(cfg);
  cfg.output.dir = b.string();
  lpfm::run_experiment(cfg);
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
    ++files;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || lpfm::read_text(e.path()) != lpfm::read_text(other)) ++differ;
  }
  fs::remove_all(a);
  fs::remove_all(b);
  return {files > 0 && differ == 0,
          fmt("%.0f metric CSVs compared, ", static_cast<double>(files)) + fmt("%.0f differ", static_cast<double>(differ))};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    double budget_s;  // 0 = no runtime bound
  };
  const std::vector<Criterion> criteria{
      {1, "ANOVA identity", anova_identity, 5},
      {2, "gradient correctness", gradient_correctness, 60},
      {3, "diffusion equivalence", diffusion_equivalence, 1},
      {4, "Laplacian constant annihilation", constant_annihilation, 0},
      {5, "NC metric oracles", nc_oracles, 0},
      {6, "PCA oracle", pca_oracle, 0},
      {7, "directional desk-scale experiment", desk_scale, 600},
      {8, "heat-diffusion collapse", heat_collapse, 0},
      {9, "determinism", determinism, 0},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s == 0 || secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %d %-34s %s  %s  [%.2f s%s]\n", c.id, c.name, pass ? "PASS" : "FAIL", o.detail.c_str(), secs,
                in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed;
}
