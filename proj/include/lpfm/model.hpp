#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lpfm/attention.hpp"
#include "lpfm/autodiff.hpp"
#include "lpfm/errors.hpp"
#include "lpfm/matrix.hpp"
#include "lpfm/numeric_core.hpp"
#include "lpfm/rng.hpp"

namespace lpfm {

enum class InputKind { SyntheticTokens, Image };

struct ModelConfig {
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t dim = 32;
  std::size_t head_dim = 8;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 4;
  InputKind input = InputKind::SyntheticTokens;
  std::size_t seq_len = 8;     // synthetic tokens per sequence
  std::size_t token_dim = 32;  // synthetic input channels
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 1;
  double drop_path = 0.0;
  bool qk_norm = false;
  double ln_eps = kDefaultLayerNormEps;
  double init_std = 0.02;
  HeadAssignment assignment;

  std::size_t num_tokens() const {
    if (input == InputKind::Image) {
      const std::size_t side = image_size / patch_size;
      return side * side;
    }
    return seq_len;
  }
  std::size_t input_dim() const {
    return input == InputKind::Image ? patch_size * patch_size * channels : token_dim;
  }
  BlockConfig block_config() const { return BlockConfig{drop_path, qk_norm, true, ln_eps}; }

  void validate() const {
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (heads == 0 || dim == 0 || head_dim == 0) throw ConfigError("model: heads, dim and head_dim must be >= 1");
    if (input == InputKind::Image) {
      if (patch_size == 0 || image_size % patch_size != 0)
        throw ConfigError("model: image_size must be divisible by patch_size");
    } else if (seq_len == 0 || token_dim == 0) {
      throw ConfigError("model: seq_len and token_dim must be >= 1");
    }
    if (!(drop_path >= 0.0 && drop_path < 1.0)) throw ConfigError("model: drop_path must lie in [0, 1)");
    assignment.validate(depth, heads);
  }
};

/// Full classifier parameters; T is Matrix<S> or Var<S>.
template <class T>
struct BasicModelParams {
  T embed_w;  // input_dim×d
  T pos;      // T×d
  std::vector<BasicBlockParams<T>> blocks;
  T norm_gamma, norm_beta;  // 1×d
  T head_w;                 // C×d
  T head_b;                 // 1×C

  template <class F>
  void visit(F&& f) {
    f(std::string("embed.w"), embed_w, true);
    f(std::string("pos"), pos, false);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit("blocks." + std::to_string(l) + ".", f);
    f(std::string("norm.gamma"), norm_gamma, false);
    f(std::string("norm.beta"), norm_beta, false);
    f(std::string("head.w"), head_w, true);
    f(std::string("head.b"), head_b, false);
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<BasicModelParams*>(this)->visit([&](const std::string& n, T& v, bool decay) {
      f(n, static_cast<const T&>(v), decay);
    });
  }

  /// Same layout, each slot produced by fn(name, source).
  template <class U, class Fn>
  BasicModelParams<U> map(Fn&& fn) const {
    BasicModelParams<U> out;
    out.blocks.resize(blocks.size());
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& src = blocks[l].attn;
      auto& dst = out.blocks[l].attn;
      dst.w_q.resize(src.w_q.size());
      dst.w_k.resize(src.w_k.size());
      dst.w_v.resize(src.w_v.size());
      dst.q_gain.resize(src.q_gain.size());
      dst.k_gain.resize(src.k_gain.size());
    }
    std::vector<const T*> sources;
    visit([&](const std::string&, const T& v, bool) { sources.push_back(&v); });
    std::size_t i = 0;
    out.visit([&](const std::string& name, U& slot, bool) { slot = fn(name, *sources[i++]); });
    return out;
  }
};

template <class S>
using ModelParams = BasicModelParams<Matrix<S>>;
template <class S>
using ModelVars = BasicModelParams<Var<S>>;

template <class S>
std::size_t parameter_count(const ModelParams<S>& p) {
  std::size_t n = 0;
  p.visit([&](const std::string&, const Matrix<S>& m, bool) { n += m.size(); });
  return n;
}

/// Weights ~ truncated normal(init_std); biases and LN shifts 0; LN gains 1;
/// positional vectors truncated normal. Every tensor draws from its own stream.
template <class S>
ModelParams<S> init_params(const ModelConfig& cfg, RngState rng) {
  cfg.validate();
  const std::size_t d = cfg.dim, dk = cfg.head_dim, h = cfg.heads, hidden = cfg.mlp_ratio * d;
  std::uint64_t stream = 0;
  auto normal = [&](std::size_t r, std::size_t c) { return trunc_normal_init<S>(r, c, cfg.init_std, rng.split(stream++)); };
  auto ones = [](std::size_t c) { return Matrix<S>(1, c, S(1)); };
  auto zeros = [](std::size_t c) { return Matrix<S>(1, c); };

  ModelParams<S> p;
  p.embed_w = normal(cfg.input_dim(), d);
  p.pos = normal(cfg.num_tokens(), d);
  p.blocks.resize(cfg.depth);
  for (auto& b : p.blocks) {
    b.ln1_gamma = ones(d);
    b.ln1_beta = zeros(d);
    for (std::size_t j = 0; j < h; ++j) {
      b.attn.w_q.push_back(normal(d, dk));
      b.attn.w_k.push_back(normal(d, dk));
      b.attn.w_v.push_back(normal(d, dk));
      if (cfg.qk_norm) {
        b.attn.q_gain.push_back(ones(dk));
        b.attn.k_gain.push_back(ones(dk));
      }
    }
    b.attn.w_o = normal(h * dk, d);
    b.ln2_gamma = ones(d);
    b.ln2_beta = zeros(d);
    b.mlp_w1 = normal(d, hidden);
    b.mlp_b1 = zeros(hidden);
    b.mlp_w2 = normal(hidden, d);
    b.mlp_b2 = zeros(d);
  }
  p.norm_gamma = ones(d);
  p.norm_beta = zeros(d);
  p.head_w = normal(cfg.num_classes, d);
  p.head_b = zeros(cfg.num_classes);
  return p;
}

/// image (H×W×ch, row-major, channel fastest) → (H/p·W/p)×(p·p·ch) patch rows,
/// patches in raster order, each flattened row-major with channel fastest.
template <class S>
Matrix<S> patchify(std::span<const S> image, std::size_t height, std::size_t width, std::size_t channels,
                   std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw ConfigError("patchify: image sides must be divisible by patch_size");
  if (image.size() != height * width * channels) throw ConfigError("patchify: image buffer size mismatch");
  const std::size_t ph = height / patch, pw = width / patch;
  Matrix<S> out(ph * pw, patch * patch * channels);
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px) {
      auto row = out.row(py * pw + px);
      std::size_t k = 0;
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t c = 0; c < channels; ++c)
            row[k++] = image[((py * patch + y) * width + (px * patch + x)) * channels + c];
    }
  return out;
}

/// Patch tokens: patchify(image) · embed + pos.
template <class S>
Matrix<S> tokenize_image(std::span<const S> image, std::size_t height, std::size_t width, std::size_t channels,
                         std::size_t patch, const Matrix<S>& embed, const Matrix<S>& pos) {
  Matrix<S> tokens = matmul(patchify(image, height, width, channels, patch), embed);
  if (!pos.same_shape(tokens)) throw ConfigError("tokenize_image: positional table shape mismatch");
  return tokens += pos;
}

template <class S>
struct ActivationCapture {
  std::vector<TokenBatch<S>> block_outputs;  // one per layer
  std::vector<TokenBatch<S>> pre_mlp_norm;   // one per layer
  TokenBatch<S> final_norm;                  // output of the final LayerNorm
  Matrix<S> pooled;                          // B×d classifier features
};

/// Per-layer drop-path stream for a training step.
inline RngState layer_stream(const RngState& rng, std::size_t layer) { return rng.split(1000 + layer); }

/// Plain (tape-free) forward: embed → blocks → final LN → mean pool → linear.
/// `inputs` holds raw tokens (B×T×input_dim).
template <class S>
Matrix<S> model_forward(const ModelConfig& cfg, const ModelParams<S>& params, const TokenBatch<S>& inputs,
                        bool training = false, const RngState& rng = RngState(), std::size_t sample_offset = 0,
                        ActivationCapture<S>* capture = nullptr, HeadTrace* trace = nullptr) {
  const std::size_t T = inputs.seq_len();
  if (T != cfg.num_tokens() || inputs.dim() != cfg.input_dim()) throw ConfigError("model_forward: input shape mismatch");
  Matrix<S> flat = matmul(inputs.flat(), params.embed_w);
  for (std::size_t i = 0; i < flat.rows(); ++i)
    for (std::size_t j = 0; j < flat.cols(); ++j) flat(i, j) += params.pos(i % T, j);
  TokenBatch<S> x(T, std::move(flat));

  const BlockConfig bc = cfg.block_config();
  if (capture) {
    capture->block_outputs.clear();
    capture->pre_mlp_norm.clear();
  }
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    BlockCapture<S> bcap;
    TokenBatch<S> pre;
    if (capture) bcap.pre_mlp_norm = &pre;
    x = encoder_block(x, params.blocks[l], bc, cfg.assignment.per_layer[l], training, layer_stream(rng, l),
                      sample_offset, bcap, trace);
    if (capture) {
      capture->block_outputs.push_back(x);
      capture->pre_mlp_norm.push_back(std::move(pre));
    }
  }
  TokenBatch<S> normed = layer_norm<S>(x, params.norm_gamma.row(0), params.norm_beta.row(0), static_cast<S>(cfg.ln_eps));
  Matrix<S> pooled(x.batch(), cfg.dim);
  for (std::size_t i = 0; i < normed.flat().rows(); ++i)
    for (std::size_t j = 0; j < cfg.dim; ++j) pooled(i / T, j) += normed.flat()(i, j);
  pooled *= S(1) / static_cast<S>(T);
  Matrix<S> logits = matmul_nt(pooled, params.head_w);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += params.head_b(0, j);
  if (capture) {
    capture->final_norm = std::move(normed);
    capture->pooled = std::move(pooled);
  }
  return logits;
}

/// Register every parameter as a leaf. Names for which `trainable(name)` is
/// false become constants and receive no gradient.
template <class S, class Pred>
ModelVars<S> register_params(Tape<S>& tape, const ModelParams<S>& params, Pred&& trainable) {
  return params.template map<Var<S>>(
      [&](const std::string& name, const Matrix<S>& m) { return tape.leaf(m, trainable(name)); });
}

template <class S>
ModelVars<S> register_params(Tape<S>& tape, const ModelParams<S>& params) {
  return register_params(tape, params, [](const std::string&) { return true; });
}

/// Taped forward mirroring model_forward. Returns the logits node (B×C).
template <class S>
Var<S> model_forward_tape(Tape<S>& tape, const ModelConfig& cfg, const ModelVars<S>& vars, const TokenBatch<S>& inputs,
                          bool training = false, const RngState& rng = RngState(), std::size_t sample_offset = 0,
                          HeadTrace* trace = nullptr) {
  const std::size_t T = inputs.seq_len(), B = inputs.batch();
  if (T != cfg.num_tokens() || inputs.dim() != cfg.input_dim())
    throw ConfigError("model_forward_tape: input shape mismatch");
  const S eps = static_cast<S>(cfg.ln_eps);
  Var<S> x = ad::add_tiled(ad::matmul(tape.constant(inputs.flat()), vars.embed_w), vars.pos);

  for (std::size_t l = 0; l < vars.blocks.size(); ++l) {
    const auto& blk = vars.blocks[l];
    const auto& kinds = cfg.assignment.per_layer[l];
    const RngState lrng = layer_stream(rng, l);
    std::vector<S> keep_attn(B * T), keep_mlp(B * T);
    bool any_attn = false, any_mlp = false, all_attn_one = true, all_mlp_one = true;
    for (std::size_t b = 0; b < B; ++b) {
      const S s1 = static_cast<S>(drop_path_scale(cfg.drop_path, training, lrng, sample_offset + b, 0));
      const S s2 = static_cast<S>(drop_path_scale(cfg.drop_path, training, lrng, sample_offset + b, 1));
      for (std::size_t t = 0; t < T; ++t) {
        keep_attn[b * T + t] = s1;
        keep_mlp[b * T + t] = s2;
      }
      any_attn = any_attn || s1 != S(0);
      any_mlp = any_mlp || s2 != S(0);
      all_attn_one = all_attn_one && s1 == S(1);
      all_mlp_one = all_mlp_one && s2 == S(1);
    }

    if (any_attn) {
      Var<S> normed = ad::layer_norm(x, blk.ln1_gamma, blk.ln1_beta, eps);
      std::vector<Var<S>> heads;
      const std::size_t dk = blk.attn.w_q.front().value().cols();
      const S scale = S(1) / std::sqrt(static_cast<S>(dk));
      for (std::size_t j = 0; j < blk.attn.heads(); ++j) {
        Var<S> q = ad::matmul(normed, blk.attn.w_q[j]);
        Var<S> k = ad::matmul(normed, blk.attn.w_k[j]);
        if (cfg.qk_norm) {
          q = ad::unit_rows_with_gain(q, blk.attn.q_gain[j], static_cast<S>(kQkNormEps));
          k = ad::unit_rows_with_gain(k, blk.attn.k_gain[j], static_cast<S>(kQkNormEps));
        }
        Var<S> v = ad::matmul(normed, blk.attn.w_v[j]);
        Var<S> p = ad::softmax_rows(ad::seq_scores(q, k, T, scale));
        Var<S> pv = ad::seq_mix(p, v, T);
        heads.push_back(kinds[j] == HeadKind::Standard ? pv : ad::sub(v, pv));
        if (trace) trace->record(kinds[j]);
      }
      Var<S> branch = ad::matmul(ad::concat_cols(heads), blk.attn.w_o);
      if (!all_attn_one) branch = ad::row_scale(branch, keep_attn);
      x = ad::add(x, branch);
    }
    if (any_mlp) {
      Var<S> normed = ad::layer_norm(x, blk.ln2_gamma, blk.ln2_beta, eps);
      Var<S> hidden = ad::gelu(ad::add_row(ad::matmul(normed, blk.mlp_w1), blk.mlp_b1));
      Var<S> branch = ad::add_row(ad::matmul(hidden, blk.mlp_w2), blk.mlp_b2);
      if (!all_mlp_one) branch = ad::row_scale(branch, keep_mlp);
      x = ad::add(x, branch);
    }
  }
  Var<S> normed = ad::layer_norm(x, vars.norm_gamma, vars.norm_beta, eps);
  Var<S> pooled = ad::seq_mean(normed, T);
  return ad::add_row(ad::matmul_nt(pooled, vars.head_w), vars.head_b);
}

/// Mean cross-entropy of integer labels under row-softmax of logits.
template <class S>
S cross_entropy(const Matrix<S>& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw DataError("cross_entropy: label count does not match batch");
  S loss = S(0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols())
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                      " out of range");
    auto row = logits.row(i);
    S mx = row[0];
    for (S v : row) mx = std::max(mx, v);
    S se = S(0);
    for (S v : row) se += std::exp(v - mx);
    loss += mx + std::log(se) - row[static_cast<std::size_t>(labels[i])];
  }
  return loss / static_cast<S>(logits.rows());
}

template <class S>
Var<S> cross_entropy(Var<S> logits, std::span<const int> labels) {
  const Matrix<S>& lv = logits.value();
  if (labels.size() != lv.rows()) throw DataError("cross_entropy: label count does not match batch");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= lv.cols())
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                      " out of range");
  return ad::cross_entropy(logits, std::vector<int>(labels.begin(), labels.end()));
}

template <class S>
std::vector<int> argmax_rows(const Matrix<S>& m) {
  std::vector<int> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace lpfm
