// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "templar/error.hpp"

namespace templar {

/// Leading r1_eff x r2_eff window of an r1 x r2 template grid, flattened
/// row-major to length r1*r2 with ones inside the window and zeros elsewhere.
struct StructuredMask {
  std::size_t r1 = 0, r2 = 0;
  std::size_t r1_eff = 0, r2_eff = 0;
  std::vector<double> values;

  std::size_t span() const { return r1 * r2; }
  bool active(std::size_t a) const { return a / r2 < r1_eff && a % r2 < r2_eff; }
  bool full() const { return r1_eff == r1 && r2_eff == r2; }

  friend bool operator==(const StructuredMask&, const StructuredMask&) = default;
};

inline StructuredMask make_mask(std::size_t r1, std::size_t r2, std::size_t r1_eff, std::size_t r2_eff) {
  if (r1 == 0 || r2 == 0 || r1_eff < 1 || r1_eff > r1 || r2_eff < 1 || r2_eff > r2) {
    throw ContractError("make_mask: effective width (" + std::to_string(r1_eff) + ", " + std::to_string(r2_eff) +
                        ") outside grid (" + std::to_string(r1) + ", " + std::to_string(r2) + ")");
  }
  StructuredMask m{r1, r2, r1_eff, r2_eff, std::vector<double>(r1 * r2, 0.0)};
  for (std::size_t i = 0; i < r1_eff; ++i)
    for (std::size_t j = 0; j < r2_eff; ++j) m.values[i * r2 + j] = 1.0;
  return m;
}

inline StructuredMask full_mask(std::size_t r1, std::size_t r2) { return make_mask(r1, r2, r1, r2); }

}  // namespace templar
