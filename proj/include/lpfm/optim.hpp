#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "lpfm/errors.hpp"
#include "lpfm/matrix.hpp"

namespace lpfm {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double grad_clip = 1.0;  // <= 0 disables clipping
};

template <class S>
struct OptimizerState {
  AdamWHyper hyper;
  std::vector<Matrix<S>> m, v;  // shape-match the parameters, lazily sized
  long step = 0;
};

/// Global L2 norm over all gradient tensors (empty tensors are skipped).
template <class S>
S global_norm(const std::vector<Matrix<S>>& grads) {
  long double acc = 0;
  for (const auto& g : grads)
    for (S v : g.data()) acc += static_cast<long double>(v) * v;
  return static_cast<S>(std::sqrt(acc));
}

/// Rescale so the global norm is at most max_norm. Returns the norm before clipping.
template <class S>
S clip_global_norm(std::vector<Matrix<S>>& grads, double max_norm) {
  const S norm = global_norm(grads);
  if (max_norm > 0.0 && norm > static_cast<S>(max_norm)) {
    const S factor = static_cast<S>(max_norm) / norm;
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

/// One AdamW update. params[i] pairs with grads[i]; an empty grads[i] marks a
/// frozen tensor that is left untouched. decay[i] selects decoupled weight decay.
template <class S>
void adamw_step(OptimizerState<S>& state, const std::vector<Matrix<S>*>& params, std::vector<Matrix<S>> grads,
                const std::vector<bool>& decay, double lr) {
  if (params.size() != grads.size() || params.size() != decay.size())
    throw InternalError("adamw_step: parameter/gradient count mismatch");
  const AdamWHyper& h = state.hyper;
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), Matrix<S>());
    state.v.assign(params.size(), Matrix<S>());
  }
  clip_global_norm(grads, h.grad_clip);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].empty()) continue;
    Matrix<S>& p = *params[i];
    if (!grads[i].same_shape(p)) throw InternalError("adamw_step: gradient shape does not match parameter");
    if (state.m[i].empty()) {
      state.m[i] = Matrix<S>(p.rows(), p.cols());
      state.v[i] = Matrix<S>(p.rows(), p.cols());
    }
    auto pd = p.data();
    auto gd = grads[i].data();
    auto md = state.m[i].data();
    auto vd = state.v[i].data();
    const S shrink = decay[i] ? static_cast<S>(1.0 - lr * h.weight_decay) : S(1);
    for (std::size_t k = 0; k < pd.size(); ++k) {
      md[k] = static_cast<S>(h.beta1) * md[k] + static_cast<S>(1.0 - h.beta1) * gd[k];
      vd[k] = static_cast<S>(h.beta2) * vd[k] + static_cast<S>(1.0 - h.beta2) * gd[k] * gd[k];
      const S mhat = md[k] / static_cast<S>(bc1);
      const S vhat = vd[k] / static_cast<S>(bc2);
      pd[k] = pd[k] * shrink - static_cast<S>(lr) * mhat / (std::sqrt(vhat) + static_cast<S>(h.eps));
    }
  }
}

struct LrSchedule {
  long warmup_steps = 0;
  long total_steps = 1;
  double peak = 3e-4;
  double start = 3e-6;
  double min = 0.0;
};

/// Linear start→peak over the warmup, cosine peak→min afterwards.
inline double lr_at(long step, const LrSchedule& s) {
  if (step < 0 || step > s.total_steps) throw ConfigError("lr_at: step outside [0, total_steps]");
  if (step < s.warmup_steps)
    return s.start + (s.peak - s.start) * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const long span = s.total_steps - s.warmup_steps;
  if (span <= 0) return s.peak;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  return s.min + (s.peak - s.min) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace lpfm
