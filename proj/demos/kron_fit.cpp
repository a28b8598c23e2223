// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Fits Kronecker banks of increasing rank to a noisy low-rank weight matrix
// and prints how the residual tracks the discarded singular values.

#include <cmath>
#include <cstdio>

#include "templar/templar.hpp"

int main() {
  using namespace templar;
  Rng rng(7);
  const FactorizationConfig truth{3, 4, 4};
  TemplateBank bank = TemplateBank::zeros(truth);
  bank.templates = random_normal(rng, 3, 16);
  ScalerSet scalers = ScalerSet::for_geometry(truth, 6, 192);
  for (Matrix& s : scalers.scalers) s = random_normal(rng, s.rows(), s.cols());
  const Matrix w = reconstruct(bank, scalers) + random_normal(rng, 6, 192, 1e-3);

  const Spectrum spec = spectrum(w, 16);
  std::printf("leading singular values:");
  for (std::size_t j = 0; j < 5; ++j) std::printf(" %.4g", spec.sigma[j]);
  std::printf("\n");
  for (std::size_t n = 1; n <= 5; ++n) {
    const FitResult f = fit(w, {n, 4, 4});
    std::printf("N=%zu  residual=%.6g  sqrt(tail)=%.6g  direct=%.6g\n", n, f.residual,
                std::sqrt(spec.tail_energy(n)), reconstruction_error(w, f.bank, f.scalers));
  }
}
