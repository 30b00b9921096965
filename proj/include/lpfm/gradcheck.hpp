#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lpfm/dataset.hpp"
#include "lpfm/model.hpp"
#include "lpfm/train.hpp"

namespace lpfm {

struct TensorGradCheck {
  std::string name;
  std::size_t size = 0;
  double analytic_norm = 0;
  double numeric_norm = 0;
  double rel_error = 0;  // ‖a − n‖ / max(‖a‖, ‖n‖), 0 when both vanish
};

/// Tape gradients of the eval-mode mean cross-entropy against central
/// differences of the plain forward pass, one entry at a time.
template <class S>
std::vector<TensorGradCheck> gradient_check(const ModelConfig& cfg, const ModelParams<S>& params,
                                            const LabeledDataset<S>& batch, double step = 1e-3) {
  const std::function<bool(const std::string&)> all = [](const std::string&) { return true; };
  const BatchGradients<S> bg = batch_gradients(cfg, params, batch, false, RngState(), all);
  ModelParams<S> probe = params;
  auto loss = [&] { return static_cast<double>(cross_entropy<S>(model_forward(cfg, probe, batch.inputs), batch.labels)); };

  std::vector<TensorGradCheck> out;
  std::size_t idx = 0;
  probe.visit([&](const std::string& name, Matrix<S>& m, bool) {
    const Matrix<S>& a = bg.grads[idx++];
    TensorGradCheck r{name, m.size(), 0, 0, 0};
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t k = 0; k < m.size(); ++k) {
      const S saved = m.data()[k];
      m.data()[k] = saved + static_cast<S>(step);
      const double up = loss();
      m.data()[k] = saved - static_cast<S>(step);
      const double down = loss();
      m.data()[k] = saved;
      const double num = (up - down) / (2.0 * step);
      const double an = static_cast<double>(a.data()[k]);
      diff2 += (an - num) * (an - num);
      a2 += an * an;
      n2 += num * num;
    }
    r.analytic_norm = std::sqrt(a2);
    r.numeric_norm = std::sqrt(n2);
    const double scale = std::max(r.analytic_norm, r.numeric_norm);
    r.rel_error = scale > 0 ? std::sqrt(diff2) / scale : 0.0;
    out.push_back(r);
  });
  return out;
}

/// The small mixed model used for gradient checks: depth 2, two heads
/// (one Standard, one Laplacian per layer), d = 8, T = 4.
inline ModelConfig gradcheck_model_config() {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.head_dim = 4;
  cfg.mlp_ratio = 4;
  cfg.num_classes = 3;
  cfg.seq_len = 4;
  cfg.token_dim = 6;
  cfg.init_std = 0.5;
  cfg.assignment = HeadAssignment::uniform(2, 2, 1);
  return cfg;
}

}  // namespace lpfm
