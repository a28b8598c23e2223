// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "templar/nn.hpp"

namespace templar::nn {
namespace {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

// Plain-loop forward pass for a single sequence.
Rows oracle_layernorm(const Rows& x, const Matrix& g, const Matrix& b) {
  Rows out = x;
  for (Vec& r : out) {
    double mu = 0, var = 0;
    for (double v : r) mu += v;
    mu /= static_cast<double>(r.size());
    for (double v : r) var += (v - mu) * (v - mu);
    var /= static_cast<double>(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - mu) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j);
  }
  return out;
}

Rows oracle_matmul(const Rows& x, const Matrix& w) {
  Rows out(x.size(), Vec(w.cols(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      for (std::size_t k = 0; k < w.rows(); ++k) out[i][j] += x[i][k] * w(k, j);
  return out;
}

Vec oracle_logits(const TinyTransformerConfig& cfg, const std::vector<LayerWeights>& layers,
                  const UntemplatedParams& p, std::span<const std::size_t> tokens) {
  const std::size_t n = tokens.size(), dm = cfg.dims.embed(), hd = cfg.dims.head_dim;
  Rows x(n, Vec(dm));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < dm; ++j) x[t][j] = p.token_embedding(tokens[t], j) + p.position_embedding(t, j);
  for (std::size_t l = 0; l < cfg.dims.layers; ++l) {
    const auto& u = p.layers[l];
    const Rows h = oracle_layernorm(x, u.ln1_gain, u.ln1_bias);
    const Rows q = oracle_matmul(h, layers[l].q), k = oracle_matmul(h, layers[l].k), v = oracle_matmul(h, layers[l].v);
    Rows attn(n, Vec(dm, 0.0));
    for (std::size_t head = 0; head < cfg.dims.heads; ++head) {
      for (std::size_t i = 0; i < n; ++i) {
        Vec s(n);
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t c = 0; c < hd; ++c) s[j] += q[i][head * hd + c] * k[j][head * hd + c];
          s[j] /= std::sqrt(static_cast<double>(hd));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t c = 0; c < hd; ++c) attn[i][head * hd + c] += s[j] / z * v[j][head * hd + c];
      }
    }
    const Rows o = oracle_matmul(attn, layers[l].o);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < dm; ++j) x[t][j] += o[t][j];
    Rows a = oracle_matmul(oracle_layernorm(x, u.ln2_gain, u.ln2_bias), layers[l].in);
    for (Vec& r : a)
      for (std::size_t j = 0; j < r.size(); ++j) {
        const double pre = r[j] + u.ffn_bias_in(0, j);
        r[j] = 0.5 * pre * (1.0 + std::erf(pre / std::sqrt(2.0)));
      }
    const Rows f = oracle_matmul(a, layers[l].out);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < dm; ++j) x[t][j] += f[t][j] + u.ffn_bias_out(0, j);
  }
  const Rows xf = oracle_layernorm(x, p.final_gain, p.final_bias);
  Vec pooled(dm, 0.0);
  for (const Vec& r : xf)
    for (std::size_t j = 0; j < dm; ++j) pooled[j] += r[j] / static_cast<double>(n);
  Vec logits(cfg.classes);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    logits[c] = p.head_bias(0, c);
    for (std::size_t j = 0; j < dm; ++j) logits[c] += pooled[j] * p.head(j, c);
  }
  return logits;
}

struct Model {
  TinyTransformerConfig cfg;
  std::vector<LayerWeights> layers;
  UntemplatedParams params;
};

// Random weights at a scale that keeps activations away from saturation.
Model random_model(std::uint64_t seed, ModelDims dims, std::size_t seq_len = 5, std::size_t vocab = 6) {
  Model m;
  m.cfg = {dims, vocab, seq_len, 2, Activation::kGelu};
  Rng rng(seed);
  for (std::size_t l = 0; l < dims.layers; ++l) {
    LayerWeights lw = zero_layer(dims);
    for (Matrix* w : lw.parts()) *w = random_normal(rng, w->rows(), w->cols(), 0.4);
    m.layers.push_back(std::move(lw));
  }
  m.params = init_untemplated(m.cfg, rng);
  for (Matrix* t : m.params.tensors()) *t += random_normal(rng, t->rows(), t->cols(), 0.3);
  return m;
}

TEST(Forward, MatchesStraightLineOracle) {
  const Model m = random_model(1, ModelDims{2, 2, 3, 0});
  const Batch batch = synth_dataset(9, 4, m.cfg.vocab, m.cfg.seq_len);
  const Matrix logits = forward(m.cfg, m.layers, m.params, batch);
  ASSERT_EQ(logits.rows(), 4u);
  ASSERT_EQ(logits.cols(), 2u);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vec want = oracle_logits(m.cfg, m.layers, m.params, batch.sequence(i));
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(logits(i, c), want[c], 1e-12) << i << "," << c;
  }
}

TEST(Forward, ZeroHeadGivesUniformLogits) {
  Model m = random_model(2, ModelDims{2, 2, 2, 0});
  m.params.head = Matrix(m.params.head.rows(), m.params.head.cols());
  m.params.head_bias = Matrix(1, 2);
  const Batch batch = synth_dataset(3, 6, m.cfg.vocab, m.cfg.seq_len);
  const Matrix logits = forward(m.cfg, m.layers, m.params, batch);
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(evaluate_loss(m.cfg, m.layers, m.params, batch), std::log(2.0), 1e-15);
}

TEST(Forward, ZeroWeightsGiveIdenticalRowsPerEmbedding) {
  Model m = random_model(3, ModelDims{1, 1, 4, 0});
  for (LayerWeights& lw : m.layers)
    for (Matrix* w : lw.parts()) *w = Matrix(w->rows(), w->cols());
  m.params.position_embedding = Matrix(m.params.position_embedding.rows(), m.params.position_embedding.cols());
  Batch b;
  b.seq_len = m.cfg.seq_len;
  b.tokens = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  b.labels = {0, 1};
  const Matrix logits = forward(m.cfg, m.layers, m.params, b);
  EXPECT_EQ(logits(0, 0), logits(1, 0));
  EXPECT_EQ(logits(0, 1), logits(1, 1));
}

TEST(Forward, IdenticalSequencesGiveIdenticalRows) {
  const Model m = random_model(4, ModelDims{2, 2, 2, 0});
  Batch b;
  b.seq_len = m.cfg.seq_len;
  b.tokens = {0, 3, 2, 5, 1, 0, 3, 2, 5, 1};
  b.labels = {0, 0};
  const Matrix logits = forward(m.cfg, m.layers, m.params, b);
  EXPECT_NEAR(logits(0, 0), logits(1, 0), 1e-14);
  EXPECT_NEAR(logits(0, 1), logits(1, 1), 1e-14);
}

TEST(Forward, BatchPermutationCovariance) {
  const Model m = random_model(5, ModelDims{2, 2, 2, 0});
  const Batch batch = synth_dataset(1, 5, m.cfg.vocab, m.cfg.seq_len);
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  Batch shuffled;
  shuffled.seq_len = batch.seq_len;
  for (std::size_t i : perm) {
    auto s = batch.sequence(i);
    shuffled.tokens.insert(shuffled.tokens.end(), s.begin(), s.end());
    shuffled.labels.push_back(batch.labels[i]);
  }
  const Matrix a = forward(m.cfg, m.layers, m.params, batch);
  const Matrix b = forward(m.cfg, m.layers, m.params, shuffled);
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(b(k, c), a(perm[k], c), 1e-13);
}

// With position embeddings removed, attention plus mean pooling ignores token order.
TEST(Forward, TokenPermutationInvarianceWithoutPositions) {
  Model m = random_model(6, ModelDims{2, 2, 2, 0});
  m.params.position_embedding = Matrix(m.params.position_embedding.rows(), m.params.position_embedding.cols());
  Batch a, b;
  a.seq_len = b.seq_len = 5;
  a.tokens = {0, 1, 2, 3, 4};
  b.tokens = {3, 0, 4, 2, 1};
  a.labels = b.labels = {1};
  const Matrix la = forward(m.cfg, m.layers, m.params, a), lb = forward(m.cfg, m.layers, m.params, b);
  EXPECT_NEAR(la(0, 0), lb(0, 0), 1e-12);
  EXPECT_NEAR(la(0, 1), lb(0, 1), 1e-12);
}

TEST(Forward, ContractErrors) {
  Model m = random_model(7, ModelDims{1, 1, 2, 0});
  Batch b = synth_dataset(0, 2, m.cfg.vocab, m.cfg.seq_len);
  b.tokens[0] = 99;
  EXPECT_THROW(forward(m.cfg, m.layers, m.params, b), ContractError);
  Batch wrong_len = synth_dataset(0, 2, m.cfg.vocab, m.cfg.seq_len + 1);
  EXPECT_THROW(forward(m.cfg, m.layers, m.params, wrong_len), ContractError);
  m.layers[0].o = Matrix(3, 3);
  EXPECT_THROW(forward(m.cfg, m.layers, m.params, synth_dataset(0, 2, m.cfg.vocab, m.cfg.seq_len)), ContractError);
}

TEST(Loss, UniformLogitsGiveLnC) {
  for (std::size_t c : {2, 3, 7}) {
    const std::vector<std::size_t> labels = {0, c - 1};
    EXPECT_NEAR(classification_loss(Matrix(2, c), labels), std::log(static_cast<double>(c)), 1e-15);
  }
}

TEST(Loss, LargeMarginIsNearZero) {
  const std::size_t labels[] = {0};
  EXPECT_LT(classification_loss(Matrix{{20.0, 0.0}}, labels), 1e-8);
}

// Central differences on every templated and untemplated tensor.
TEST(Gradients, MatchFiniteDifferences) {
  const Model m = random_model(8, ModelDims{2, 2, 4, 0}, 4, 5);
  const Batch batch = synth_dataset(2, 3, m.cfg.vocab, m.cfg.seq_len);
  const ModelGradients g = loss_and_gradients(m.cfg, m.layers, m.params, batch);
  EXPECT_NEAR(g.loss, evaluate_loss(m.cfg, m.layers, m.params, batch), 1e-14);
  const double h = 1e-4;
  Rng pick(0);

  auto check = [&](auto&& mutate, const Matrix& analytic, const char* what) {
    double worst = 0.0, scale = 0.0;
    for (double v : analytic.values()) scale = std::max(scale, std::abs(v));
    for (int probe = 0; probe < 8; ++probe) {
      const std::size_t idx = pick.uniform_int(analytic.size());
      const double fd = (mutate(idx, h) - mutate(idx, -h)) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic.values()[idx]));
    }
    EXPECT_LE(worst / std::max(scale, 1e-12), 1e-4) << what;
  };

  for (std::size_t l = 0; l < m.layers.size(); ++l)
    for (std::size_t k = 0; k < 6; ++k) {
      auto f = [&](std::size_t idx, double dx) {
        Model c = m;
        c.layers[l].parts()[k]->values()[idx] += dx;
        return evaluate_loss(c.cfg, c.layers, c.params, batch);
      };
      check(f, *g.layers[l].parts()[k], kLayerMatrixNames[k]);
    }
  const std::size_t n_tensors = m.params.tensors().size();
  ASSERT_EQ(g.untemplated.size(), n_tensors);
  for (std::size_t t = 0; t < n_tensors; ++t) {
    if (t == 0) continue;  // token embedding rows for unused ids are zero; checked below
    auto f = [&](std::size_t idx, double dx) {
      Model c = m;
      c.params.tensors()[t]->values()[idx] += dx;
      return evaluate_loss(c.cfg, c.layers, c.params, batch);
    };
    check(f, g.untemplated[t], "untemplated");
  }
  {
    double worst = 0.0;
    for (std::size_t idx = 0; idx < g.untemplated[0].size(); ++idx) {
      Model a = m, b = m;
      a.params.token_embedding.values()[idx] += h;
      b.params.token_embedding.values()[idx] -= h;
      const double fd = (evaluate_loss(a.cfg, a.layers, a.params, batch) - evaluate_loss(b.cfg, b.layers, b.params, batch)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.untemplated[0].values()[idx]));
    }
    EXPECT_LE(worst, 1e-8);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamState s;
  s.config.lr = 1e-3;
  Matrix p{{1.0, -2.0, 0.5}};
  const Matrix g{{0.3, -4.0, 1e-3}};
  Matrix* ps[] = {&p};
  const Matrix* gs[] = {&g};
  adam_step(s, ps, gs);
  EXPECT_NEAR(p(0, 0), 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(p(0, 1), -2.0 + 1e-3, 1e-9);
  EXPECT_NEAR(p(0, 2), 0.5 - 1e-3, 1e-7);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ZeroGradientOnlyDecays) {
  AdamState s;
  s.config.lr = 0.1;
  s.config.weight_decay = 0.5;
  Matrix p{{2.0}};
  const Matrix g{{0.0}};
  Matrix* ps[] = {&p};
  const Matrix* gs[] = {&g};
  adam_step(s, ps, gs);
  EXPECT_DOUBLE_EQ(p(0, 0), 2.0 * (1.0 - 0.05));
}

TEST(Adam, DescendsQuadratic) {
  AdamState s;
  s.config.lr = 0.05;
  Matrix p{{3.0, -1.5}};
  for (int i = 0; i < 500; ++i) {
    const Matrix g = p * 2.0;
    Matrix* ps[] = {&p};
    const Matrix* gs[] = {&g};
    adam_step(s, ps, gs);
  }
  EXPECT_LT(std::abs(p(0, 0)), 0.05);
  EXPECT_LT(std::abs(p(0, 1)), 0.05);
}

TEST(Adam, ShapeChangesRejected) {
  AdamState s;
  Matrix p(1, 2);
  const Matrix g(1, 3);
  Matrix* ps[] = {&p};
  const Matrix* gs[] = {&g};
  EXPECT_THROW(adam_step(s, ps, gs), ContractError);
}

TEST(Data, ParityExamples) {
  const std::size_t a[] = {0, 0, 1}, b[] = {0, 1, 2}, c[] = {3, 4, 5};
  EXPECT_EQ(sentinel_parity(a), 0u);
  EXPECT_EQ(sentinel_parity(b), 1u);
  EXPECT_EQ(sentinel_parity(c), 0u);
}

TEST(Data, BalancedAndLabelledByParity) {
  const Batch d = synth_dataset(11, 2000, 16, 16);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d.labels[i], sentinel_parity(d.sequence(i)));
    ones += d.labels[i];
  }
  const double frac = static_cast<double>(ones) / static_cast<double>(d.size());
  EXPECT_GE(frac, 0.45);
  EXPECT_LE(frac, 0.55);
  EXPECT_EQ(synth_dataset(11, 50, 16, 16).tokens, synth_dataset(11, 50, 16, 16).tokens);
}

TEST(Data, SliceWraps) {
  const Batch d = synth_dataset(1, 4, 8, 3);
  const Batch s = slice_batch(d, 3, 3);
  EXPECT_EQ(s.labels, (std::vector<std::size_t>{d.labels[3], d.labels[0], d.labels[1]}));
}

TEST(Desk, UnifiedRowLength) { EXPECT_EQ(desk_config().dims.row_length(), 768u); }

}  // namespace
}  // namespace templar::nn
