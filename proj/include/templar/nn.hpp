// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// A small pre-LayerNorm transformer classifier built on the autodiff tape,
// plus its loss, an Adam optimizer and a synthetic token-classification task.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "templar/autodiff.hpp"
#include "templar/error.hpp"
#include "templar/linalg.hpp"
#include "templar/packing.hpp"

namespace templar::nn {

enum class Activation { kGelu, kRelu };

struct TinyTransformerConfig {
  ModelDims dims;
  std::size_t vocab = 16;
  std::size_t seq_len = 16;
  std::size_t classes = 2;
  Activation activation = Activation::kGelu;

  void validate() const {
    dims.validate();
    if (classes < 2) throw ContractError("TinyTransformerConfig: need at least 2 classes");
    if (seq_len < 1) throw ContractError("TinyTransformerConfig: seq_len must be >= 1");
    if (vocab < 1) throw ContractError("TinyTransformerConfig: vocab must be >= 1");
  }
};

/// L=4, H=2, d=4 (D=8), D'=32, vocab 16, 16 tokens, 2 classes.
inline TinyTransformerConfig desk_config() { return {ModelDims{4, 2, 4, 32}, 16, 16, 2, Activation::kGelu}; }

// ---------------------------------------------------------------------------
// Data

struct Batch {
  std::size_t seq_len = 0;
  std::vector<std::size_t> tokens;  // size() * seq_len, example-major
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const std::size_t> sequence(std::size_t i) const { return {tokens.data() + i * seq_len, seq_len}; }

  void validate(std::size_t vocab, std::size_t classes) const {
    if (tokens.size() != labels.size() * seq_len) throw ContractError("Batch: token count does not match labels");
    for (std::size_t t : tokens)
      if (t >= vocab) throw ContractError("Batch: token id " + std::to_string(t) + " >= vocab " + std::to_string(vocab));
    for (std::size_t y : labels)
      if (y >= classes) throw ContractError("Batch: label " + std::to_string(y) + " out of range");
  }
};

/// Parity of the number of sentinel (id 0) tokens.
inline std::size_t sentinel_parity(std::span<const std::size_t> tokens) {
  std::size_t count = 0;
  for (std::size_t t : tokens) count += t == 0 ? 1 : 0;
  return count % 2;
}

/// Uniform random token sequences labelled by sentinel parity. Classes are
/// balanced by rejection: example i is redrawn until its label equals i mod 2.
inline Batch synth_dataset(std::uint64_t seed, std::size_t n_examples, std::size_t vocab, std::size_t seq_len) {
  if (vocab < 2 || seq_len < 1) throw ContractError("synth_dataset: need vocab >= 2 and seq_len >= 1");
  Rng rng(seed);
  Batch out;
  out.seq_len = seq_len;
  out.tokens.reserve(n_examples * seq_len);
  out.labels.reserve(n_examples);
  std::vector<std::size_t> seq(seq_len);
  for (std::size_t i = 0; i < n_examples; ++i) {
    const std::size_t want = i % 2;
    do {
      for (std::size_t& t : seq) t = static_cast<std::size_t>(rng.uniform_int(vocab));
    } while (sentinel_parity(seq) != want);
    out.tokens.insert(out.tokens.end(), seq.begin(), seq.end());
    out.labels.push_back(want);
  }
  return out;
}

/// `count` consecutive examples starting at `start`, wrapping around.
inline Batch slice_batch(const Batch& data, std::size_t start, std::size_t count) {
  if (data.size() == 0) throw ContractError("slice_batch: empty dataset");
  Batch b;
  b.seq_len = data.seq_len;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = (start + k) % data.size();
    auto s = data.sequence(i);
    b.tokens.insert(b.tokens.end(), s.begin(), s.end());
    b.labels.push_back(data.labels[i]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Parameters that are trained directly (never templated)

struct UntemplatedParams {
  struct Layer {
    Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Matrix ffn_bias_in, ffn_bias_out;
  };

  Matrix token_embedding, position_embedding;
  std::vector<Layer> layers;
  Matrix final_gain, final_bias;
  Matrix head, head_bias;

  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out{&token_embedding, &position_embedding};
    for (Layer& l : layers)
      for (Matrix* m : {&l.ln1_gain, &l.ln1_bias, &l.ln2_gain, &l.ln2_bias, &l.ffn_bias_in, &l.ffn_bias_out})
        out.push_back(m);
    for (Matrix* m : {&final_gain, &final_bias, &head, &head_bias}) out.push_back(m);
    return out;
  }
  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    for (Matrix* m : const_cast<UntemplatedParams*>(this)->tensors()) out.push_back(m);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix* m : tensors()) n += m->size();
    return n;
  }

  friend bool operator==(const UntemplatedParams& a, const UntemplatedParams& b) {
    auto ta = a.tensors(), tb = b.tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t k = 0; k < ta.size(); ++k)
      if (!(*ta[k] == *tb[k])) return false;
    return true;
  }
};

/// Embeddings and head ~ N(0, 0.02); LayerNorm gains 1; all biases 0.
inline UntemplatedParams init_untemplated(const TinyTransformerConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.dims.embed(), f = cfg.dims.ffn_dim();
  UntemplatedParams p;
  p.token_embedding = random_normal(rng, cfg.vocab, d, 0.02);
  p.position_embedding = random_normal(rng, cfg.seq_len, d, 0.02);
  for (std::size_t l = 0; l < cfg.dims.layers; ++l) {
    p.layers.push_back({Matrix(1, d, 1.0), Matrix(1, d), Matrix(1, d, 1.0), Matrix(1, d), Matrix(1, f), Matrix(1, d)});
  }
  p.final_gain = Matrix(1, d, 1.0);
  p.final_bias = Matrix(1, d);
  p.head = random_normal(rng, d, cfg.classes, 0.02);
  p.head_bias = Matrix(1, cfg.classes);
  return p;
}

/// All-zero parameters (LayerNorm gains included).
inline UntemplatedParams zero_untemplated(const TinyTransformerConfig& cfg) {
  Rng rng(0);
  UntemplatedParams p = init_untemplated(cfg, rng);
  for (Matrix* m : p.tensors()) *m = Matrix(m->rows(), m->cols());
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardGraph {
  ad::Var logits;
  std::vector<std::array<ad::Var, 6>> layers;  // leaves for q, k, v, o, in, out
  std::vector<ad::Var> untemplated;            // leaves in UntemplatedParams::tensors() order
};

/// Records the forward pass on `tape`. Every parameter becomes a leaf.
/// Blocks are pre-LayerNorm: x += MSA(LN(x)); x += FFN(LN(x)). The classifier
/// reads the mean over positions of the final LayerNorm output.
inline ForwardGraph build_forward(ad::Tape& tape, const TinyTransformerConfig& cfg,
                                  const std::vector<LayerWeights>& layers, const UntemplatedParams& params,
                                  const Batch& batch) {
  cfg.validate();
  batch.validate(cfg.vocab, cfg.classes);
  const ModelDims& dims = cfg.dims;
  if (batch.seq_len != cfg.seq_len) {
    throw ContractError("forward: batch seq_len " + std::to_string(batch.seq_len) + " != model seq_len " +
                        std::to_string(cfg.seq_len));
  }
  if (layers.size() != dims.layers || params.layers.size() != dims.layers) {
    throw ContractError("forward: expected " + std::to_string(dims.layers) + " layers");
  }
  const auto shapes = layer_shapes(dims);
  ForwardGraph g;
  for (std::size_t l = 0; l < dims.layers; ++l) {
    const auto parts = layers[l].parts();
    std::array<ad::Var, 6> leaves;
    for (std::size_t k = 0; k < 6; ++k) {
      if (parts[k]->rows() != shapes[k].first || parts[k]->cols() != shapes[k].second) {
        throw ContractError("forward: layer " + std::to_string(l) + " " + kLayerMatrixNames[k] + " is " +
                            parts[k]->shape_str());
      }
      leaves[k] = tape.leaf(*parts[k]);
    }
    g.layers.push_back(leaves);
  }
  for (const Matrix* m : params.tensors()) g.untemplated.push_back(tape.leaf(*m));

  const std::size_t n = cfg.seq_len, b = batch.size(), d = dims.head_dim;
  const ad::Var& tok = g.untemplated[0];
  const ad::Var& pos = g.untemplated[1];
  std::vector<std::size_t> positions(b * n);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % n;
  ad::Var x = ad::add(ad::gather_rows(tok, batch.tokens), ad::gather_rows(pos, positions));

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < dims.layers; ++l) {
    const auto& w = g.layers[l];
    const ad::Var* u = &g.untemplated[2 + 6 * l];
    ad::Var h = ad::layernorm(x, u[0], u[1]);
    ad::Var q = ad::matmul(h, w[0]);
    ad::Var k = ad::matmul(h, w[1]);
    ad::Var v = ad::matmul(h, w[2]);
    std::vector<ad::Var> examples;
    examples.reserve(b);
    std::vector<ad::Var> heads(dims.heads);
    for (std::size_t e = 0; e < b; ++e) {
      for (std::size_t hh = 0; hh < dims.heads; ++hh) {
        ad::Var qe = ad::slice(q, e * n, n, hh * d, d);
        ad::Var ke = ad::slice(k, e * n, n, hh * d, d);
        ad::Var ve = ad::slice(v, e * n, n, hh * d, d);
        ad::Var scores = ad::scale(ad::matmul(qe, ad::transpose(ke)), inv_sqrt_d);
        heads[hh] = ad::matmul(ad::softmax_rows(scores), ve);
      }
      examples.push_back(dims.heads == 1 ? heads[0] : ad::concat_cols(heads));
    }
    ad::Var attn = b == 1 ? examples[0] : ad::concat_rows(examples);
    x = ad::add(x, ad::matmul(attn, w[3]));

    ad::Var h2 = ad::layernorm(x, u[2], u[3]);
    ad::Var pre = ad::add_row(ad::matmul(h2, w[4]), u[4]);
    ad::Var act = cfg.activation == Activation::kGelu ? ad::gelu(pre) : ad::relu(pre);
    x = ad::add(x, ad::add_row(ad::matmul(act, w[5]), u[5]));
  }
  const std::size_t tail = 2 + 6 * dims.layers;
  ad::Var xf = ad::layernorm(x, g.untemplated[tail], g.untemplated[tail + 1]);
  ad::Var pooled = ad::segment_mean_rows(xf, n);
  g.logits = ad::add_row(ad::matmul(pooled, g.untemplated[tail + 2]), g.untemplated[tail + 3]);
  return g;
}

/// Per-example logits (batch x classes).
inline Matrix forward(const TinyTransformerConfig& cfg, const std::vector<LayerWeights>& layers,
                      const UntemplatedParams& params, const Batch& batch) {
  ad::Tape tape;
  return tape.value(build_forward(tape, cfg, layers, params, batch).logits);
}

inline ad::Var classification_loss(const ad::Var& logits, std::span<const std::size_t> labels) {
  return ad::cross_entropy(logits, labels);
}

/// Mean cross-entropy evaluated without a tape.
inline double classification_loss(const Matrix& logits, std::span<const std::size_t> labels) {
  ad::Tape tape;
  return tape.value(ad::cross_entropy(tape.constant(logits), labels))(0, 0);
}

struct ModelGradients {
  double loss = 0.0;
  std::vector<LayerWeights> layers;
  std::vector<Matrix> untemplated;  // UntemplatedParams::tensors() order
};

inline ModelGradients loss_and_gradients(const TinyTransformerConfig& cfg, const std::vector<LayerWeights>& layers,
                                         const UntemplatedParams& params, const Batch& batch) {
  ad::Tape tape;
  ForwardGraph g = build_forward(tape, cfg, layers, params, batch);
  ad::Var loss = classification_loss(g.logits, batch.labels);
  const ad::Gradients grads = tape.backward(loss);
  ModelGradients out;
  out.loss = tape.value(loss)(0, 0);
  for (const auto& leaves : g.layers) {
    LayerWeights lw;
    auto parts = lw.parts();
    for (std::size_t k = 0; k < 6; ++k) *parts[k] = grads[leaves[k]];
    out.layers.push_back(std::move(lw));
  }
  for (const ad::Var& v : g.untemplated) out.untemplated.push_back(grads[v]);
  return out;
}

inline double evaluate_loss(const TinyTransformerConfig& cfg, const std::vector<LayerWeights>& layers,
                            const UntemplatedParams& params, const Batch& batch) {
  return classification_loss(forward(cfg, layers, params, batch), batch.labels);
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Matrix> m, v;
};

/// One Adam step with decoupled weight decay, applied in place. Moment buffers
/// are created on first use and must keep the same shapes afterwards.
inline void adam_step(AdamState& state, std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
  if (params.size() != grads.size()) throw ContractError("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: parameter list changed between steps");
  const AdamConfig& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = *grads[k];
    if (!p.same_shape(g) || !p.same_shape(state.m[k])) {
      throw ContractError("adam_step: parameter " + std::to_string(k) + " is " + p.shape_str() + ", gradient " +
                          g.shape_str() + ", moments " + state.m[k].shape_str());
    }
    auto pv = p.values();
    auto gv = g.values();
    auto mv = state.m[k].values();
    auto vv = state.v[k].values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = c.beta1 * mv[i] + (1.0 - c.beta1) * gv[i];
      vv[i] = c.beta2 * vv[i] + (1.0 - c.beta2) * gv[i] * gv[i];
      const double mhat = mv[i] / bc1;
      const double vhat = vv[i] / bc2;
      pv[i] -= c.lr * c.weight_decay * pv[i];
      pv[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace templar::nn
