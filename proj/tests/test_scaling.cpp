// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "templar/factorization.hpp"
#include "templar/mask.hpp"
#include "templar/scaling.hpp"

namespace templar {
namespace {

TemplateBank grid_bank(std::initializer_list<std::initializer_list<double>> grid) {
  const std::size_t r1 = grid.size(), r2 = grid.begin()->size();
  TemplateBank b = TemplateBank::zeros({1, r1, r2});
  std::size_t k = 0;
  for (const auto& row : grid)
    for (double v : row) b.templates(0, k++) = v;
  return b;
}

TEST(Mask, Examples) {
  EXPECT_EQ(make_mask(2, 2, 2, 2).values, (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(make_mask(2, 2, 2, 1).values, (std::vector<double>{1, 0, 1, 0}));
  EXPECT_EQ(make_mask(2, 2, 1, 1).values, (std::vector<double>{1, 0, 0, 0}));
  EXPECT_TRUE(make_mask(3, 4, 3, 4).full());
  EXPECT_THROW(make_mask(2, 2, 3, 1), ContractError);
  EXPECT_THROW(make_mask(2, 2, 0, 1), ContractError);
}

TEST(Mask, ActiveMatchesValues) {
  const StructuredMask m = make_mask(4, 5, 2, 3);
  for (std::size_t a = 0; a < m.span(); ++a) EXPECT_EQ(m.active(a), m.values[a] == 1.0);
}

TEST(Schedule, Default) {
  const WidthSchedule s = default_schedule(8, 8);
  ASSERT_EQ(s.widths.size(), 3u);
  EXPECT_EQ(s.widths[0], (std::pair<std::size_t, std::size_t>{4, 4}));
  EXPECT_EQ(s.widths[1], (std::pair<std::size_t, std::size_t>{6, 6}));
  EXPECT_EQ(s.widths[2], (std::pair<std::size_t, std::size_t>{8, 8}));
  EXPECT_EQ(s.weights, (std::vector<double>{0.25, 0.25, 0.5}));
  const WidthSchedule odd = default_schedule(5, 3);
  EXPECT_EQ(odd.widths[0], (std::pair<std::size_t, std::size_t>{3, 2}));
  EXPECT_EQ(odd.widths[1], (std::pair<std::size_t, std::size_t>{4, 3}));
}

TEST(Schedule, SingleCandidateAlwaysChosen) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) EXPECT_TRUE(sample_mask(fixed_schedule(3, 3), rng).full());
}

TEST(Schedule, EqualWeightsAreBalanced) {
  Rng rng(0);
  WidthSchedule s{4, 4, {{2, 2}, {4, 4}}, {1.0, 1.0}};
  int small = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) small += sample_mask(s, rng).r1_eff == 2 ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(small) / n, 0.5, 0.05);
}

TEST(Schedule, ZeroWeightNeverDrawn) {
  Rng rng(3);
  WidthSchedule s{4, 4, {{2, 2}, {4, 4}}, {1.0, 0.0}};
  for (int i = 0; i < 2000; ++i) EXPECT_EQ(sample_mask(s, rng).r1_eff, 2u);
}

TEST(Schedule, Invalid) {
  Rng rng(0);
  EXPECT_THROW(sample_mask(WidthSchedule{4, 4, {}, {}}, rng), ContractError);
  EXPECT_THROW(sample_mask(WidthSchedule{4, 4, {{5, 4}}, {1.0}}, rng), ContractError);
  EXPECT_THROW(sample_mask(WidthSchedule{4, 4, {{2, 2}}, {0.0}}, rng), ContractError);
  EXPECT_THROW(sample_mask(WidthSchedule{4, 4, {{2, 2}}, {1.0, 2.0}}, rng), ContractError);
}

TEST(AdaptTemplate, IdentityTruncationTiling) {
  const TemplateBank b = grid_bank({{1, 2}, {3, 4}});
  EXPECT_EQ(adapt_template(b, 2, 2), b);
  EXPECT_EQ(adapt_template(b, 1, 1).templates, (Matrix{{1}}));
  EXPECT_EQ(adapt_template(b, 3, 3).templates, (Matrix{{1, 2, 1, 3, 4, 3, 1, 2, 1}}));
  EXPECT_THROW(adapt_template(b, 0, 2), ContractError);
}

TEST(AdaptTemplate, AxesCommute) {
  Rng rng(4);
  TemplateBank b = TemplateBank::zeros({3, 5, 6});
  b.templates = random_normal(rng, 3, 30);
  EXPECT_EQ(adapt_template(adapt_template(b, 3, 6), 3, 2), adapt_template(adapt_template(b, 5, 2), 3, 2));
  EXPECT_EQ(adapt_template(adapt_template(b, 3, 6), 3, 2), adapt_template(b, 3, 2));
}

// Columns with mask 0 vanish; the surviving columns coincide with a truncated
// bank composed with the scalers that belong to those columns.
TEST(MaskedReconstruction, ZeroPatternAndTruncationAgreement) {
  Rng rng(5);
  const std::size_t r1 = 4, r2 = 3, n = 2, layers = 3, blocks = 5;
  TemplateBank bank = TemplateBank::zeros({n, r1, r2});
  bank.templates = random_normal(rng, n, r1 * r2);
  ScalerSet s = ScalerSet::zeros(n, layers, blocks);
  for (Matrix& m : s.scalers) m = random_normal(rng, layers, blocks);
  for (std::size_t e1 = 1; e1 <= r1; ++e1)
    for (std::size_t e2 = 1; e2 <= r2; ++e2) {
      const StructuredMask mask = make_mask(r1, r2, e1, e2);
      const Matrix w = reconstruct(bank, s, mask);
      const Matrix small = reconstruct(adapt_template(bank, e1, e2), s);
      std::size_t kept = 0;
      for (std::size_t a = 0; a < r1 * r2; ++a) {
        for (std::size_t l = 0; l < layers; ++l)
          for (std::size_t b = 0; b < blocks; ++b) {
            if (!mask.active(a)) {
              EXPECT_EQ(w(l, a * blocks + b), 0.0);
            } else {
              EXPECT_EQ(w(l, a * blocks + b), small(l, kept * blocks + b));
            }
          }
        if (mask.active(a)) ++kept;
      }
      EXPECT_EQ(kept, e1 * e2);
    }
}

}  // namespace
}  // namespace templar
