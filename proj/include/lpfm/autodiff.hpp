#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "lpfm/errors.hpp"
#include "lpfm/matrix.hpp"
#include "lpfm/numeric_core.hpp"

namespace lpfm {

template <class S>
class Tape;

/// Handle to a node recorded on a Tape.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<S>& value() const { return tape->value(*this); }
};

/// Reverse-mode tape over matrix-valued primitives. Nodes are appended in
/// execution order, so reverse insertion order is a reverse topological order.
template <class S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix<S>& grad_out)>;

  Var<S> leaf(Matrix<S> value, bool trainable) {
    nodes_.push_back(Node{std::move(value), {}, trainable, trainable, nullptr});
    return {this, nodes_.size() - 1};
  }
  Var<S> constant(Matrix<S> value) { return leaf(std::move(value), false); }

  /// Append a computed node. It needs a gradient iff any parent does.
  Var<S> record(Matrix<S> value, std::initializer_list<Var<S>> parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(fn) : nullptr});
    return {this, nodes_.size() - 1};
  }
  Var<S> record(Matrix<S> value, const std::vector<Var<S>>& parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(fn) : nullptr});
    return {this, nodes_.size() - 1};
  }

  const Matrix<S>& value(Var<S> v) const {
    check_owner(v);
    return nodes_[v.id].value;
  }
  bool requires_grad(Var<S> v) const {
    check_owner(v);
    return nodes_[v.id].requires_grad;
  }

  /// Gradient of the last backward() target w.r.t. v; throws for nodes that
  /// were not marked trainable (they receive none).
  const Matrix<S>& grad(Var<S> v) const {
    check_owner(v);
    const Node& n = nodes_[v.id];
    if (!n.trainable) throw InternalError("Tape::grad: node is not a trainable leaf");
    if (n.grad.empty() && !n.value.empty()) {
      zero_cache_ = Matrix<S>(n.value.rows(), n.value.cols());
      return zero_cache_;
    }
    return n.grad;
  }

  /// Accumulate into the gradient buffer of `v` (used by backward functions).
  Matrix<S>& grad_buffer(Var<S> v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Matrix<S>(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool wants_grad(Var<S> v) const { return nodes_[v.id].requires_grad; }

  void backward(Var<S> loss) {
    check_owner(loss);
    if (loss.id >= nodes_.size()) throw InternalError("Tape::backward: loss node not on tape");
    const Matrix<S>& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1) throw InternalError("Tape::backward: loss must be a 1x1 scalar node");
    for (auto& n : nodes_) n.grad = Matrix<S>();
    visited_.clear();
    nodes_[loss.id].grad = Matrix<S>(1, 1, S(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      visited_.push_back(i);
      if (n.backward) {
        const Matrix<S> g = n.grad;  // parents may reallocate nothing, but keep a stable copy
        n.backward(*this, g);
      }
    }
  }

  /// Node ids processed by the last backward(), in processing order.
  const std::vector<std::size_t>& last_visit_order() const noexcept { return visited_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix<S> value;
    Matrix<S> grad;
    bool requires_grad;
    bool trainable;
    BackwardFn backward;
  };

  void check_owner(Var<S> v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw InternalError("Tape: variable belongs to a different tape");
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> visited_;
  mutable Matrix<S> zero_cache_;
};

namespace ad {

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  return t.record(lpfm::matmul(a.value(), b.value()), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.wants_grad(a)) t.grad_buffer(a) += lpfm::matmul_nt(g, t.value(b));
    if (t.wants_grad(b)) t.grad_buffer(b) += lpfm::matmul_tn(t.value(a), g);
  });
}

/// a · bᵀ
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  return t.record(lpfm::matmul_nt(a.value(), b.value()), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.wants_grad(a)) t.grad_buffer(a) += lpfm::matmul(g, t.value(b));
    if (t.wants_grad(b)) t.grad_buffer(b) += lpfm::matmul_tn(g, t.value(a));
  });
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.wants_grad(a)) t.grad_buffer(a) += g;
    if (t.wants_grad(b)) t.grad_buffer(b) += g;
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.wants_grad(a)) t.grad_buffer(a) += g;
    if (t.wants_grad(b)) t.grad_buffer(b) -= g;
  });
}

template <class S>
Var<S> scale(Var<S> a, S s) {
  Tape<S>& t = *a.tape;
  return t.record(a.value() * s, {a}, [a, s](Tape<S>& t, const Matrix<S>& g) { t.grad_buffer(a) += g * s; });
}

/// a + r with the 1×cols row r broadcast over rows.
template <class S>
Var<S> add_row(Var<S> a, Var<S> r) {
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value();
  const Matrix<S>& rv = r.value();
  if (rv.rows() != 1 || rv.cols() != out.cols()) throw InternalError("add_row: shape mismatch");
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
  return t.record(std::move(out), {a, r}, [a, r](Tape<S>& t, const Matrix<S>& g) {
    if (t.wants_grad(a)) t.grad_buffer(a) += g;
    if (t.wants_grad(r)) {
      Matrix<S>& gr = t.grad_buffer(r);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
    }
  });
}

/// a ((B·T)×d) plus the T×d block `tile` repeated for each of the B sequences.
template <class S>
Var<S> add_tiled(Var<S> a, Var<S> tile) {
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value();
  const Matrix<S>& tv = tile.value();
  const std::size_t T = tv.rows();
  if (T == 0 || out.rows() % T != 0 || tv.cols() != out.cols()) throw InternalError("add_tiled: shape mismatch");
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += tv(i % T, j);
  return t.record(std::move(out), {a, tile}, [a, tile, T](Tape<S>& t, const Matrix<S>& g) {
    if (t.wants_grad(a)) t.grad_buffer(a) += g;
    if (t.wants_grad(tile)) {
      Matrix<S>& gt = t.grad_buffer(tile);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gt(i % T, j) += g(i, j);
    }
  });
}

/// Row i multiplied by the constant factors[i].
template <class S>
Var<S> row_scale(Var<S> a, std::vector<S> factors) {
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value();
  if (factors.size() != out.rows()) throw InternalError("row_scale: factor count mismatch");
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (auto& v : out.row(i)) v *= factors[i];
  return t.record(std::move(out), {a}, [a, f = std::move(factors)](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j) * f[i];
  });
}

template <class S>
Var<S> gelu(Var<S> a) {
  Tape<S>& t = *a.tape;
  Matrix<S> out = a.value();
  for (auto& v : out.data()) v = lpfm::gelu(v);
  return t.record(std::move(out), {a}, [a](Tape<S>& t, const Matrix<S>& g) {
    const Matrix<S>& x = t.value(a);
    Matrix<S>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * lpfm::gelu_grad(x.data()[i]);
  });
}

/// Row-wise LayerNorm with 1×d gamma/beta.
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps) {
  Tape<S>& t = *x.tape;
  const Matrix<S>& xv = x.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  Matrix<S> xhat(rows, d);
  std::vector<S> inv_std(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    auto in = xv.row(i);
    S mean = S(0);
    for (S v : in) mean += v;
    mean /= static_cast<S>(d);
    S var = S(0);
    for (S v : in) var += (v - mean) * (v - mean);
    var /= static_cast<S>(d);
    const S denom = std::sqrt(var + eps);
    inv_std[i] = denom > S(0) ? S(1) / denom : S(0);
    for (std::size_t j = 0; j < d; ++j) xhat(i, j) = (in[j] - mean) * inv_std[i];
  }
  Matrix<S> out(rows, d);
  const Matrix<S>& gv = gamma.value();
  const Matrix<S>& bv = beta.value();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < d; ++j) out(i, j) = gv(0, j) * xhat(i, j) + bv(0, j);
  return t.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<S>& t,
                                                                                         const Matrix<S>& g) {
                    const std::size_t rows = g.rows(), d = g.cols();
                    const Matrix<S>& gv = t.value(gamma);
                    if (t.wants_grad(gamma)) {
                      Matrix<S>& gg = t.grad_buffer(gamma);
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < d; ++j) gg(0, j) += g(i, j) * xhat(i, j);
                    }
                    if (t.wants_grad(beta)) {
                      Matrix<S>& gb = t.grad_buffer(beta);
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < d; ++j) gb(0, j) += g(i, j);
                    }
                    if (t.wants_grad(x)) {
                      Matrix<S>& gx = t.grad_buffer(x);
                      std::vector<S> dxhat(d);
                      for (std::size_t i = 0; i < rows; ++i) {
                        S mean_d = S(0), mean_dx = S(0);
                        for (std::size_t j = 0; j < d; ++j) {
                          dxhat[j] = g(i, j) * gv(0, j);
                          mean_d += dxhat[j];
                          mean_dx += dxhat[j] * xhat(i, j);
                        }
                        mean_d /= static_cast<S>(d);
                        mean_dx /= static_cast<S>(d);
                        for (std::size_t j = 0; j < d; ++j)
                          gx(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
                      }
                    }
                  });
}

/// y = x / (‖x‖ + eps) ⊙ gain, row-wise; gain is 1×cols.
template <class S>
Var<S> unit_rows_with_gain(Var<S> x, Var<S> gain, S eps) {
  Tape<S>& t = *x.tape;
  const Matrix<S>& xv = x.value();
  const Matrix<S>& gv = gain.value();
  std::vector<S> norms(xv.rows());
  Matrix<S> out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    norms[i] = norm2<S>(xv.row(i));
    const S n = norms[i] + eps;
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(i, j) / n * gv(0, j);
  }
  return t.record(std::move(out), {x, gain}, [x, gain, eps, norms = std::move(norms)](Tape<S>& t, const Matrix<S>& g) {
    const Matrix<S>& xv = t.value(x);
    const Matrix<S>& gv = t.value(gain);
    const std::size_t cols = xv.cols();
    if (t.wants_grad(gain)) {
      Matrix<S>& gg = t.grad_buffer(gain);
      for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) gg(0, j) += g(i, j) * xv(i, j) / (norms[i] + eps);
    }
    if (t.wants_grad(x)) {
      Matrix<S>& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < xv.rows(); ++i) {
        const S r = norms[i], n = r + eps;
        S proj = S(0);
        for (std::size_t j = 0; j < cols; ++j) proj += g(i, j) * gv(0, j) * xv(i, j);
        const S coef = r > S(0) ? proj / (n * n * r) : S(0);
        for (std::size_t j = 0; j < cols; ++j) gx(i, j) += g(i, j) * gv(0, j) / n - coef * xv(i, j);
      }
    }
  });
}

/// Per-sequence scaled scores: block b of the (B·T)×T result is s · Q_b K_bᵀ.
template <class S>
Var<S> seq_scores(Var<S> q, Var<S> k, std::size_t T, S s) {
  Tape<S>& t = *q.tape;
  const Matrix<S>& qv = q.value();
  const Matrix<S>& kv = k.value();
  const std::size_t B = qv.rows() / T, dk = qv.cols();
  Matrix<S> out(qv.rows(), T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < T; ++i) {
      const S* qi = qv.row(b * T + i).data();
      for (std::size_t j = 0; j < T; ++j) {
        const S* kj = kv.row(b * T + j).data();
        S acc = S(0);
        for (std::size_t c = 0; c < dk; ++c) acc += qi[c] * kj[c];
        out(b * T + i, j) = s * acc;
      }
    }
  return t.record(std::move(out), {q, k}, [q, k, T, s](Tape<S>& t, const Matrix<S>& g) {
    const Matrix<S>& qv = t.value(q);
    const Matrix<S>& kv = t.value(k);
    const std::size_t B = qv.rows() / T, dk = qv.cols();
    const bool wq = t.wants_grad(q), wk = t.wants_grad(k);
    Matrix<S>* gq = wq ? &t.grad_buffer(q) : nullptr;
    Matrix<S>* gk = wk ? &t.grad_buffer(k) : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j) {
          const S gij = s * g(b * T + i, j);
          if (gij == S(0)) continue;
          for (std::size_t c = 0; c < dk; ++c) {
            if (gq) (*gq)(b * T + i, c) += gij * kv(b * T + j, c);
            if (gk) (*gk)(b * T + j, c) += gij * qv(b * T + i, c);
          }
        }
  });
}

template <class S>
Var<S> softmax_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  return t.record(lpfm::softmax_rows(a.value()), {a}, [a](Tape<S>& t, const Matrix<S>& g) {
    // y is recomputed from the input; storing it would double the tape memory.
    const Matrix<S> y = lpfm::softmax_rows(t.value(a));
    Matrix<S>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      S inner = S(0);
      for (std::size_t j = 0; j < g.cols(); ++j) inner += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - inner);
    }
  });
}

/// Per-sequence mixing: block b of the result is P_b V_b (P stacked (B·T)×T).
template <class S>
Var<S> seq_mix(Var<S> p, Var<S> v, std::size_t T) {
  Tape<S>& t = *p.tape;
  const Matrix<S>& pv = p.value();
  const Matrix<S>& vv = v.value();
  const std::size_t B = vv.rows() / T, dk = vv.cols();
  Matrix<S> out(vv.rows(), dk);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < T; ++i) {
      S* o = out.row(b * T + i).data();
      for (std::size_t j = 0; j < T; ++j) {
        const S w = pv(b * T + i, j);
        const S* vj = vv.row(b * T + j).data();
        for (std::size_t c = 0; c < dk; ++c) o[c] += w * vj[c];
      }
    }
  return t.record(std::move(out), {p, v}, [p, v, T](Tape<S>& t, const Matrix<S>& g) {
    const Matrix<S>& pv = t.value(p);
    const Matrix<S>& vv = t.value(v);
    const std::size_t B = vv.rows() / T, dk = vv.cols();
    const bool wp = t.wants_grad(p), wv = t.wants_grad(v);
    Matrix<S>* gp = wp ? &t.grad_buffer(p) : nullptr;
    Matrix<S>* gv = wv ? &t.grad_buffer(v) : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < T; ++i) {
        const S* gi = g.row(b * T + i).data();
        for (std::size_t j = 0; j < T; ++j) {
          if (gp) {
            S acc = S(0);
            const S* vj = vv.row(b * T + j).data();
            for (std::size_t c = 0; c < dk; ++c) acc += gi[c] * vj[c];
            (*gp)(b * T + i, j) += acc;
          }
          if (gv) {
            const S w = pv(b * T + i, j);
            S* gvj = gv->row(b * T + j).data();
            for (std::size_t c = 0; c < dk; ++c) gvj[c] += w * gi[c];
          }
        }
      }
  });
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw InternalError("concat_cols: no inputs");
  Tape<S>& t = *parts.front().tape;
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != rows) throw InternalError("concat_cols: row mismatch");
    cols += p.value().cols();
  }
  Matrix<S> out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Matrix<S>& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    off += pv.cols();
  }
  return t.record(std::move(out), parts, [parts](Tape<S>& t, const Matrix<S>& g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = t.value(p).cols();
      if (t.wants_grad(p)) {
        Matrix<S>& gp = t.grad_buffer(p);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) gp(i, j) += g(i, off + j);
      }
      off += c;
    }
  });
}

/// Mean over the T tokens of each sequence: (B·T)×d → B×d.
template <class S>
Var<S> seq_mean(Var<S> x, std::size_t T) {
  Tape<S>& t = *x.tape;
  const Matrix<S>& xv = x.value();
  const std::size_t B = xv.rows() / T;
  Matrix<S> out(B, xv.cols());
  const S inv = S(1) / static_cast<S>(T);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i / T, j) += xv(i, j);
  out *= inv;
  return t.record(std::move(out), {x}, [x, T, inv](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g(i / T, j) * inv;
  });
}

template <class S>
Var<S> sum(Var<S> a) {
  Tape<S>& t = *a.tape;
  S acc = S(0);
  for (S v : a.value().data()) acc += v;
  return t.record(Matrix<S>(1, 1, acc), {a}, [a](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>& ga = t.grad_buffer(a);
    for (auto& v : ga.data()) v += g(0, 0);
  });
}

/// Mean over rows of −log softmax(logits)[label]. Labels are validated by the caller.
template <class S>
Var<S> cross_entropy(Var<S> logits, std::vector<int> labels) {
  Tape<S>& t = *logits.tape;
  const Matrix<S>& lv = logits.value();
  const std::size_t B = lv.rows();
  Matrix<S> probs = lpfm::softmax_rows(lv);
  S loss = S(0);
  for (std::size_t i = 0; i < B; ++i) {
    auto row = lv.row(i);
    S mx = row[0];
    for (S v : row) mx = std::max(mx, v);
    S se = S(0);
    for (S v : row) se += std::exp(v - mx);
    loss += mx + std::log(se) - row[static_cast<std::size_t>(labels[i])];
  }
  loss /= static_cast<S>(B);
  return t.record(Matrix<S>(1, 1, loss), {logits},
                  [logits, probs = std::move(probs), labels = std::move(labels)](Tape<S>& t, const Matrix<S>& g) {
                    Matrix<S>& gl = t.grad_buffer(logits);
                    const S scale = g(0, 0) / static_cast<S>(probs.rows());
                    for (std::size_t i = 0; i < probs.rows(); ++i)
                      for (std::size_t j = 0; j < probs.cols(); ++j)
                        gl(i, j) += scale * (probs(i, j) - (static_cast<int>(j) == labels[i] ? S(1) : S(0)));
                  });
}

}  // namespace ad
}  // namespace lpfm
