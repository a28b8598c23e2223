// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "templar/factorization.hpp"
#include "templar/mask.hpp"

namespace templar {
namespace {

struct Case {
  TemplateBank bank;
  ScalerSet scalers;
};

Case random_case(Rng& rng, std::size_t n, std::size_t r1, std::size_t r2, std::size_t layers, std::size_t blocks) {
  Case c{TemplateBank::zeros({n, r1, r2}), ScalerSet::zeros(n, layers, blocks)};
  c.bank.templates = random_normal(rng, n, r1 * r2);
  for (Matrix& s : c.scalers.scalers) s = random_normal(rng, layers, blocks);
  return c;
}

// Sum of explicit Kronecker products, the literal composition formula.
Matrix compose_oracle(const Case& c, const StructuredMask* mask = nullptr) {
  const std::size_t a = c.bank.config.span();
  Matrix w(c.scalers.layers, a * c.scalers.b_cols);
  for (std::size_t i = 0; i < c.bank.size(); ++i) {
    Matrix t(1, a);
    for (std::size_t k = 0; k < a; ++k) t(0, k) = c.bank.templates(i, k) * (mask ? mask->values[k] : 1.0);
    w += kronecker(t, c.scalers.scalers[i]);
  }
  return w;
}

double inner(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.values()[k] * b.values()[k];
  return s;
}

std::vector<double> sigma_of(const Matrix& w, std::size_t span) {
  return svd(rearrange(w, RearrangeDims::of(w.rows(), w.cols(), span))).sigma;
}

double tail_energy(const std::vector<double>& s, std::size_t n) {
  double t = 0.0;
  for (std::size_t j = n; j < s.size(); ++j) t += s[j] * s[j];
  return t;
}

TEST(Config, Validation) {
  EXPECT_THROW((FactorizationConfig{0, 1, 1}.validate()), ContractError);
  EXPECT_TRUE((FactorizationConfig{8, 8, 8}.has_bottleneck(4, 768)));
  EXPECT_FALSE((FactorizationConfig{48, 8, 8}.has_bottleneck(4, 768)));
  EXPECT_THROW(ScalerSet::for_geometry({1, 3, 3}, 2, 10), ContractError);
  EXPECT_EQ(ScalerSet::for_geometry({8, 8, 8}, 4, 768).b_cols, 12u);
  EXPECT_EQ(ScalerSet::for_geometry({8, 8, 8}, 4, 768).parameter_count(), 8u * 4 * 12);
}

TEST(Config, GridForSpan) {
  EXPECT_EQ(grid_for_span(2, 64), (FactorizationConfig{2, 8, 8}));
  EXPECT_EQ(grid_for_span(1, 6), (FactorizationConfig{1, 1, 6}));
  EXPECT_EQ(grid_for_span(1, 1), (FactorizationConfig{1, 1, 1}));
}

TEST(Reconstruct, HandExample) {
  TemplateBank bank = TemplateBank::zeros({1, 1, 2});
  bank.templates = Matrix{{1, 2}};
  ScalerSet s = ScalerSet::zeros(1, 2, 2);
  s.scalers[0] = Matrix{{1, 2}, {3, 4}};
  EXPECT_EQ(reconstruct(bank, s), (Matrix{{1, 2, 2, 4}, {3, 4, 6, 8}}));
}

TEST(Reconstruct, ScalarTemplate) {
  Rng rng(1);
  const Matrix w = random_normal(rng, 3, 5);
  const double c = 2.0;
  TemplateBank bank = TemplateBank::zeros({1, 1, 1});
  bank.templates(0, 0) = c;
  ScalerSet s = ScalerSet::zeros(1, 3, 5);
  s.scalers[0] = w * (1.0 / c);
  EXPECT_EQ(reconstruct(bank, s), w);
}

TEST(Reconstruct, MatchesKroneckerSumAndFullMask) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Case c = random_case(rng, 3, 2, 3, 4, 5);
    const Matrix w = reconstruct(c.bank, c.scalers);
    EXPECT_LE(max_abs_diff(w, compose_oracle(c)), 1e-12);
    EXPECT_EQ(reconstruct(c.bank, c.scalers, full_mask(2, 3)), w);
  }
}

TEST(Reconstruct, MismatchErrors) {
  Rng rng(3);
  Case c = random_case(rng, 2, 2, 2, 3, 4);
  c.scalers.scalers.pop_back();
  EXPECT_THROW(reconstruct(c.bank, c.scalers), ContractError);
  Case d = random_case(rng, 2, 2, 2, 3, 4);
  EXPECT_THROW(reconstruct(d.bank, d.scalers, full_mask(3, 3)), ContractError);
}

TEST(Rearrange, HandExample) {
  const Matrix w{{1, 2, 2, 4}, {3, 4, 6, 8}};
  const RearrangeDims dims = RearrangeDims::of(2, 4, 2);
  EXPECT_EQ(dims.blocks, 2u);
  const Matrix r = rearrange(w, dims);
  EXPECT_EQ(r, (Matrix{{1, 2}, {2, 4}, {3, 6}, {4, 8}}));
  EXPECT_EQ(unrearrange(Matrix{{1, 2}, {2, 4}, {3, 6}, {4, 8}}, dims), w);
}

TEST(Rearrange, SingleBlockKeepsContent) {
  Rng rng(4);
  const Matrix w = random_normal(rng, 3, 6);
  EXPECT_EQ(rearrange(w, RearrangeDims::of(3, 6, 6)), w);
}

TEST(Rearrange, BijectionNormAndRankOne) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t layers = 1 + rng.uniform_int(4), span = 1 + rng.uniform_int(6), blocks = 1 + rng.uniform_int(5);
    const RearrangeDims dims = RearrangeDims::of(layers, span * blocks, span);
    const Matrix w = random_normal(rng, layers, span * blocks);
    const Matrix r = rearrange(w, dims);
    EXPECT_EQ(unrearrange(r, dims), w);
    // A permutation of entries: equal sorted contents give bit-equal norms.
    std::vector<double> a(w.values().begin(), w.values().end()), b(r.values().begin(), r.values().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_EQ(frobenius_norm(Matrix(1, a.size(), a)), frobenius_norm(Matrix(1, b.size(), b)));

    const Case c = random_case(rng, 1, 1, span, layers, blocks);
    const Matrix rt = rearrange(reconstruct(c.bank, c.scalers), dims);
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t bb = 0; bb < blocks; ++bb)
        for (std::size_t k = 0; k < span; ++k)
          EXPECT_EQ(rt(l * blocks + bb, k), c.scalers.scalers[0](l, bb) * c.bank.templates(0, k));
  }
}

TEST(Rearrange, ZeroAndErrors) {
  const RearrangeDims dims = RearrangeDims::of(2, 6, 3);
  EXPECT_EQ(unrearrange(Matrix(4, 3), dims), Matrix(2, 6));
  EXPECT_THROW(RearrangeDims::of(2, 7, 3), ContractError);
  EXPECT_THROW(rearrange(Matrix(2, 5), dims), ContractError);
}

TEST(Fit, ExactRankOne) {
  const Matrix w{{1, 2, 2, 4}, {3, 4, 6, 8}};
  const FitResult f = fit(w, {1, 1, 2});
  EXPECT_LE(f.residual, 1e-12);
  EXPECT_LE(reconstruction_error(w, f.bank, f.scalers), 1e-12);
}

TEST(Fit, FullRankIsExact) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const Matrix w = random_normal(rng, 3, 24);
    const std::size_t n = std::min<std::size_t>(3 * 6, 4);
    const FitResult f = fit(w, {n, 2, 2});
    EXPECT_LE(reconstruction_error(w, f.bank, f.scalers), 1e-9 * frobenius_norm(w));
  }
}

TEST(Fit, TooManyTemplates) {
  EXPECT_THROW(fit(Matrix(2, 4, 1.0), {3, 1, 2}), ContractError);
}

TEST(Fit, ResidualMatchesIndependentSpectrum) {
  Rng rng(0);
  const Matrix w = random_normal(rng, 4, 8);
  const FitResult f = fit(w, {1, 2, 2});
  const double expected = tail_energy(sigma_of(w, 4), 1);
  EXPECT_NEAR(f.residual * f.residual / expected, 1.0, 1e-10);
  const double direct = reconstruction_error(w, f.bank, f.scalers);
  EXPECT_NEAR(direct * direct / expected, 1.0, 1e-10);
}

TEST(Fit, EckartYoungEquality) {
  Rng rng(7);
  for (int t = 0; t < 30; ++t) {
    const Matrix w = random_normal(rng, 3, 36);
    const std::vector<double> s = sigma_of(w, 9);
    for (std::size_t n = 1; n <= 9; ++n) {
      const FitResult f = fit(w, {n, 3, 3});
      const double err = reconstruction_error(w, f.bank, f.scalers);
      const double tail = tail_energy(s, n);
      if (tail > 1e-20) EXPECT_NEAR(err * err / tail, 1.0, 1e-8);
      else EXPECT_LE(err, 1e-9);
    }
  }
}

TEST(Fit, NoRandomCompetitorBeatsIt) {
  Rng rng(8);
  const Matrix w = random_normal(rng, 4, 32);
  const FitResult f = fit(w, {2, 2, 2});
  const double best = reconstruction_error(w, f.bank, f.scalers);
  for (int t = 0; t < 20; ++t) {
    Case c = random_case(rng, 2, 2, 2, 4, 8);
    // Perturb the optimum as well as trying fresh draws.
    if (t % 2 == 0) {
      c.bank.templates = f.bank.templates + random_normal(rng, 2, 4, 0.05);
      for (std::size_t i = 0; i < 2; ++i) c.scalers.scalers[i] = f.scalers.scalers[i] + random_normal(rng, 4, 8, 0.05);
    }
    EXPECT_GE(reconstruction_error(w, c.bank, c.scalers), best - 1e-9);
  }
}

TEST(Fit, PerTermNormIdentity) {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const Case c = random_case(rng, 1, 2, 3, 3, 4);
    const double lhs = frobenius_norm(reconstruct(c.bank, c.scalers));
    EXPECT_NEAR(lhs / (frobenius_norm(c.bank.templates) * frobenius_norm(c.scalers.scalers[0])), 1.0, 1e-12);
  }
}

TEST(ReconstructionError, ZeroBank) {
  Rng rng(10);
  const Matrix w = random_normal(rng, 2, 8);
  EXPECT_DOUBLE_EQ(reconstruction_error(w, TemplateBank::zeros({2, 2, 2}), ScalerSet::zeros(2, 2, 2)),
                   frobenius_norm(w));
}

TEST(KronGradients, HandExample) {
  TemplateBank bank = TemplateBank::zeros({1, 1, 2});
  bank.templates = Matrix{{1, 2}};
  ScalerSet s = ScalerSet::zeros(1, 2, 2);
  s.scalers[0] = Matrix{{1, 2}, {3, 4}};
  const KronGradients g = kron_gradients(Matrix(2, 4, 1.0), bank, s);
  EXPECT_EQ(g.templates, (Matrix{{10, 10}}));
  EXPECT_EQ(g.scalers[0], (Matrix{{3, 3}, {3, 3}}));
}

TEST(KronGradients, MaskedEntriesAreExactlyZero) {
  Rng rng(11);
  const Case c = random_case(rng, 3, 3, 3, 2, 4);
  const StructuredMask m = make_mask(3, 3, 2, 1);
  const KronGradients g = kron_gradients(random_normal(rng, 2, 36), c.bank, c.scalers, m);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t a = 0; a < 9; ++a)
      if (!m.active(a)) EXPECT_EQ(g.templates(i, a), 0.0);
      else EXPECT_NE(g.templates(i, a), 0.0);
}

// <G, reconstruct(T, S)> is bilinear, so central differences are exact up to
// rounding for any step.
void check_against_finite_differences(Rng& rng, const StructuredMask* mask) {
  Case c = random_case(rng, 2, 2, 3, 3, 4);
  const Matrix g = random_normal(rng, 3, 24);
  const KronGradients an = kron_gradients(g, c.bank, c.scalers, mask);
  const double h = 1e-3;
  auto f = [&](const Case& x) { return inner(g, reconstruct(x.bank, x.scalers, mask)); };
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1.0, std::abs(n)); };
  for (std::size_t k = 0; k < c.bank.templates.size(); ++k) {
    Case p = c, q = c;
    p.bank.templates.values()[k] += h;
    q.bank.templates.values()[k] -= h;
    EXPECT_LE(rel(an.templates.values()[k], (f(p) - f(q)) / (2 * h)), 1e-8);
  }
  for (std::size_t i = 0; i < c.scalers.size(); ++i)
    for (std::size_t k = 0; k < c.scalers.scalers[i].size(); ++k) {
      Case p = c, q = c;
      p.scalers.scalers[i].values()[k] += h;
      q.scalers.scalers[i].values()[k] -= h;
      EXPECT_LE(rel(an.scalers[i].values()[k], (f(p) - f(q)) / (2 * h)), 1e-8);
    }
}

TEST(KronGradients, MatchFiniteDifferences) {
  Rng rng(12);
  const StructuredMask m = make_mask(2, 3, 1, 2);
  for (int t = 0; t < 5; ++t) {
    check_against_finite_differences(rng, nullptr);
    check_against_finite_differences(rng, &m);
  }
}

TEST(KronGradients, ShapeErrors) {
  Rng rng(13);
  const Case c = random_case(rng, 1, 2, 2, 2, 3);
  EXPECT_THROW(kron_gradients(Matrix(2, 11), c.bank, c.scalers), ContractError);
}

TEST(Bank, ChecksumSensitivity) {
  Rng rng(14);
  const Case c = random_case(rng, 2, 2, 2, 1, 1);
  TemplateBank b = c.bank;
  EXPECT_EQ(b.checksum(), c.bank.checksum());
  b.templates(1, 3) = std::nextafter(b.templates(1, 3), 1e9);
  EXPECT_NE(b.checksum(), c.bank.checksum());
}

}  // namespace
}  // namespace templar
