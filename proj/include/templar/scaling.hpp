// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Width handling for templates: randomly sampled structured masks during
// pretraining, and truncation / periodic tiling when a bank is reused at a
// different width.

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "templar/error.hpp"
#include "templar/factorization.hpp"
#include "templar/linalg.hpp"
#include "templar/mask.hpp"

namespace templar {

struct WidthSchedule {
  std::size_t r1 = 0, r2 = 0;
  std::vector<std::pair<std::size_t, std::size_t>> widths;  // (r1_eff, r2_eff)
  std::vector<double> weights;

  void validate() const {
    if (widths.empty()) throw ContractError("WidthSchedule: no candidate widths");
    if (weights.size() != widths.size()) {
      throw ContractError("WidthSchedule: " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(widths.size()) + " widths");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const auto [w1, w2] = widths[k];
      if (w1 < 1 || w1 > r1 || w2 < 1 || w2 > r2) {
        throw ContractError("WidthSchedule: width (" + std::to_string(w1) + ", " + std::to_string(w2) +
                            ") outside grid (" + std::to_string(r1) + ", " + std::to_string(r2) + ")");
      }
      if (!(weights[k] >= 0.0)) throw ContractError("WidthSchedule: negative weight");
      total += weights[k];
    }
    if (!(total > 0.0)) throw ContractError("WidthSchedule: weights sum to zero");
  }
};

/// Square-synchronized widths {ceil(r/2), ceil(3r/4), r} with weights
/// {0.25, 0.25, 0.5}, so the full grid is drawn at least half the time.
inline WidthSchedule default_schedule(std::size_t r1, std::size_t r2) {
  auto frac = [](std::size_t r, std::size_t num, std::size_t den) { return (r * num + den - 1) / den; };
  return {r1, r2,
          {{frac(r1, 1, 2), frac(r2, 1, 2)}, {frac(r1, 3, 4), frac(r2, 3, 4)}, {r1, r2}},
          {0.25, 0.25, 0.5}};
}

/// A schedule that always returns the full grid.
inline WidthSchedule fixed_schedule(std::size_t r1, std::size_t r2) { return {r1, r2, {{r1, r2}}, {1.0}}; }

inline StructuredMask sample_mask(const WidthSchedule& schedule, Rng& rng) {
  schedule.validate();
  double total = 0.0;
  for (double w : schedule.weights) total += w;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t pick = schedule.widths.size();
  for (std::size_t k = 0; k < schedule.widths.size(); ++k) {
    if (schedule.weights[k] <= 0.0) continue;
    acc += schedule.weights[k];
    pick = k;
    if (u < acc) break;
  }
  const auto [w1, w2] = schedule.widths[pick];
  return make_mask(schedule.r1, schedule.r2, w1, w2);
}

/// Resizes every template grid to target_r1 x target_r2. Each axis keeps its
/// leading entries when shrinking and repeats periodically when growing:
/// out(i, j) = T(i mod r1, j mod r2).
inline TemplateBank adapt_template(const TemplateBank& bank, std::size_t target_r1, std::size_t target_r2) {
  bank.validate();
  if (target_r1 < 1 || target_r2 < 1) throw ContractError("adapt_template: target widths must be >= 1");
  const std::size_t r1 = bank.config.r1, r2 = bank.config.r2;
  FactorizationConfig cfg{bank.config.n_templates, target_r1, target_r2};
  TemplateBank out = TemplateBank::zeros(cfg);
  for (std::size_t n = 0; n < bank.size(); ++n)
    for (std::size_t i = 0; i < target_r1; ++i)
      for (std::size_t j = 0; j < target_r2; ++j)
        out.templates(n, i * target_r2 + j) = bank.templates(n, (i % r1) * r2 + (j % r2));
  return out;
}

}  // namespace templar
