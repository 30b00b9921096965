#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lpfm/autodiff.hpp"
#include "lpfm/dataset.hpp"
#include "lpfm/errors.hpp"
#include "lpfm/model.hpp"
#include "lpfm/optim.hpp"
#include "lpfm/rng.hpp"

namespace lpfm {

struct TrainHyper {
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr_peak = 3e-4;
  double lr_start = 3e-6;
  double lr_min = 0.0;
  int warmup_epochs = 5;
  AdamWHyper adamw;
  /// Parameter-name prefixes to train; empty trains everything.
  std::vector<std::string> trainable_prefixes;

  bool is_trainable(const std::string& name) const {
    if (trainable_prefixes.empty()) return true;
    for (const auto& p : trainable_prefixes)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  }
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;  // at the last step of the epoch
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
};

template <class S>
struct TrainResult {
  ModelParams<S> params;
  std::vector<EpochMetrics> history;
  HeadTrace trace;
};

/// Eval-mode loss and accuracy over a dataset, in chunks.
template <class S>
std::pair<double, double> evaluate(const ModelConfig& cfg, const ModelParams<S>& params, const LabeledDataset<S>& ds,
                                   std::size_t chunk = 256) {
  if (ds.size() == 0) return {0.0, 0.0};
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t n = std::min(chunk, ds.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    const auto part = ds.subset(idx);
    const Matrix<S> logits = model_forward(cfg, params, part.inputs);
    loss += static_cast<double>(cross_entropy<S>(logits, part.labels)) * static_cast<double>(n);
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == part.labels[i];
  }
  return {loss / static_cast<double>(ds.size()), static_cast<double>(correct) / static_cast<double>(ds.size())};
}

/// Gradients of the mean cross-entropy over `batch`, in visit order; frozen
/// tensors get an empty matrix.
template <class S>
struct BatchGradients {
  S loss{};
  Matrix<S> logits;
  std::vector<Matrix<S>> grads;
};

template <class S>
BatchGradients<S> batch_gradients(const ModelConfig& cfg, const ModelParams<S>& params,
                                  const LabeledDataset<S>& batch, bool training, const RngState& rng,
                                  const std::function<bool(const std::string&)>& trainable, HeadTrace* trace = nullptr) {
  Tape<S> tape;
  const ModelVars<S> vars = register_params(tape, params, trainable);
  const Var<S> logits = model_forward_tape(tape, cfg, vars, batch.inputs, training, rng, 0, trace);
  const Var<S> loss = cross_entropy<S>(logits, batch.labels);
  tape.backward(loss);
  BatchGradients<S> out{loss.value()(0, 0), logits.value(), {}};
  vars.visit([&](const std::string& name, const Var<S>& v, bool) {
    out.grads.push_back(trainable(name) ? tape.grad(v) : Matrix<S>());
  });
  return out;
}

/// Deterministic given (cfg, data, hyper, seed). Seed streams: 1 = init,
/// 2 = batch order, 3 = drop path.
template <class S>
TrainResult<S> train(const ModelConfig& cfg, const LabeledDataset<S>& train_set, const LabeledDataset<S>* test_set,
                     const TrainHyper& hyper, std::uint64_t seed,
                     const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0) throw DataError("train: dataset is empty");
  train_set.validate();
  if (hyper.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  const RngState root(seed);
  TrainResult<S> result;
  result.params = init_params<S>(cfg, root.split(1));
  const RngState order_rng = root.split(2), drop_rng = root.split(3);

  const std::size_t n = train_set.size();
  const long steps_per_epoch = static_cast<long>((n + hyper.batch_size - 1) / hyper.batch_size);
  LrSchedule sched;
  sched.total_steps = std::max<long>(1, steps_per_epoch * hyper.epochs);
  sched.warmup_steps = std::min<long>(sched.total_steps, steps_per_epoch * hyper.warmup_epochs);
  sched.peak = hyper.lr_peak;
  sched.start = hyper.lr_start;
  sched.min = hyper.lr_min;

  OptimizerState<S> opt;
  opt.hyper = hyper.adamw;
  std::vector<Matrix<S>*> slots;
  std::vector<bool> decay;
  result.params.visit([&](const std::string&, Matrix<S>& m, bool dec) {
    slots.push_back(&m);
    decay.push_back(dec);
  });
  const std::function<bool(const std::string&)> trainable = [&](const std::string& name) {
    return hyper.is_trainable(name);
  };

  long step = 0;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RngState shuffle = order_rng.split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    EpochMetrics m;
    m.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += hyper.batch_size) {
      const std::size_t bs = std::min(hyper.batch_size, n - start);
      const auto batch = train_set.subset({order.begin() + static_cast<long>(start),
                                           order.begin() + static_cast<long>(start + bs)});
      BatchGradients<S> bg;
      try {
        bg = batch_gradients(cfg, result.params, batch, true, drop_rng.split(static_cast<std::uint64_t>(step)),
                             trainable, &result.trace);
      } catch (const NumericInputError& e) {
        throw TrainingError(std::string("training diverged: ") + e.what(), epoch);
      }
      if (!std::isfinite(static_cast<double>(bg.loss))) throw TrainingError("non-finite training loss", epoch);
      loss_sum += static_cast<double>(bg.loss) * static_cast<double>(bs);
      const auto pred = argmax_rows(bg.logits);
      for (std::size_t i = 0; i < bs; ++i) correct += pred[i] == batch.labels[i];
      m.lr = lr_at(step, sched);
      adamw_step(opt, slots, std::move(bg.grads), decay, m.lr);
      ++step;
    }
    m.train_loss = loss_sum / static_cast<double>(n);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    if (test_set && test_set->size() > 0) {
      std::pair<double, double> eval;
      try {
        eval = evaluate(cfg, result.params, *test_set);
      } catch (const NumericInputError& e) {
        throw TrainingError(std::string("evaluation diverged: ") + e.what(), epoch);
      }
      if (!std::isfinite(eval.first)) throw TrainingError("non-finite test loss", epoch);
      m.test_loss = eval.first;
      m.test_acc = eval.second;
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace lpfm
