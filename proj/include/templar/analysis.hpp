// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Diagnostics from the approximation theory: singular spectra of the
// rearranged weight matrix, the smallest Kronecker rank meeting an output
// error target, sampled Lipschitz constants and a Rademacher-style gap bound.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "templar/error.hpp"
#include "templar/factorization.hpp"
#include "templar/linalg.hpp"

namespace templar {

struct Spectrum {
  std::vector<double> sigma;  // non-increasing
  std::size_t layers = 0, span = 0, blocks = 0;

  std::size_t rank(double tol = 1e-12) const {
    return static_cast<std::size_t>(std::count_if(sigma.begin(), sigma.end(), [&](double s) { return s > tol; }));
  }
  /// sum_{j >= n} sigma_j^2 (0-indexed, i.e. the energy left after n terms).
  double tail_energy(std::size_t n) const {
    double t = 0.0;
    for (std::size_t j = n; j < sigma.size(); ++j) t += sigma[j] * sigma[j];
    return t;
  }
};

inline Spectrum spectrum(const Matrix& w, std::size_t span) {
  if (span == 0 || w.cols() % span != 0) {
    throw ContractError("spectrum: P=" + std::to_string(w.cols()) + " is not divisible by A=" + std::to_string(span));
  }
  const RearrangeDims dims = RearrangeDims::of(w.rows(), w.cols(), span);
  SvdResult s = svd(rearrange(w, dims));
  return {std::move(s.sigma), dims.layers, dims.span, dims.blocks};
}

/// Smallest N >= 1 whose discarded tail satisfies sum_{j>N} sigma_j^2 <= (eps / K)^2.
inline std::size_t min_templates(const Spectrum& spec, double epsilon, double k) {
  if (!(epsilon > 0.0) || !(k > 0.0)) throw ContractError("min_templates: epsilon and K must be positive");
  const double budget = (epsilon / k) * (epsilon / k);
  // Suffix sums taken from the small end so the comparison is not swamped by
  // rounding in the large leading values.
  std::vector<double> tail(spec.sigma.size() + 1, 0.0);
  for (std::size_t j = spec.sigma.size(); j-- > 0;) tail[j] = tail[j + 1] + spec.sigma[j] * spec.sigma[j];
  for (std::size_t n = 1; n < tail.size(); ++n)
    if (tail[n] <= budget) return n;
  return std::max<std::size_t>(1, spec.sigma.size());
}

struct LipschitzEstimate {
  double k_hat = 0.0;
  std::size_t samples = 0;
  std::vector<double> running;  // running max after each sample
};

/// f(W, input) -> output; evaluated at a fixed base W.
using ParamForward = std::function<Matrix(const Matrix& w, std::size_t input)>;

inline constexpr double kMinPerturbation = 1e-8;

/// Sampled lower bound on K in ||f(x; W1) - f(x; W2)|| <= K ||W1 - W2||_F.
/// Each sample draws an input index and a Gaussian direction rescaled to
/// Frobenius norm `perturb_scale`.
inline LipschitzEstimate estimate_lipschitz(const ParamForward& f, const Matrix& base, std::size_t n_inputs, Rng& rng,
                                            std::size_t n_samples, double perturb_scale) {
  if (n_samples < 1) throw ContractError("estimate_lipschitz: n_samples must be >= 1");
  if (n_inputs < 1) throw ContractError("estimate_lipschitz: no inputs");
  if (!(perturb_scale >= kMinPerturbation)) {
    throw ContractError("estimate_lipschitz: perturbation scale must be >= 1e-8");
  }
  LipschitzEstimate est;
  est.running.reserve(n_samples);
  std::vector<Matrix> base_out(n_inputs);
  while (est.samples < n_samples) {
    const std::size_t x = static_cast<std::size_t>(rng.uniform_int(n_inputs));
    Matrix dw = random_normal(rng, base.rows(), base.cols());
    const double norm = frobenius_norm(dw);
    if (!(norm > 0.0)) continue;
    dw *= perturb_scale / norm;
    const double dn = frobenius_norm(dw);
    if (dn < kMinPerturbation) continue;
    if (base_out[x].size() == 0) base_out[x] = f(base, x);
    const Matrix out = f(base + dw, x);
    const double ratio = frobenius_norm(out - base_out[x]) / dn;
    est.k_hat = std::max(est.k_hat, ratio);
    est.running.push_back(est.k_hat);
    ++est.samples;
  }
  return est;
}

struct BoundInputs {
  double loss_lipschitz = 1.0;  // L_l
  double input_radius = 1.0;    // R
  double scaler_cap = 1.0;      // C_S
  double template_norm = 1.0;   // ||T||_F
  double samples = 100.0;       // m
  double delta = 0.05;
  double weight_cap = 1.0;      // C_W, full fine-tuning comparison

  void validate() const {
    if (!(loss_lipschitz > 0 && input_radius > 0 && scaler_cap > 0 && template_norm > 0 && samples > 0 &&
          weight_cap > 0)) {
      throw ContractError("BoundInputs: all quantities must be positive");
    }
    if (!(delta > 0.0 && delta < 1.0)) throw ContractError("BoundInputs: delta must lie in (0, 1)");
  }
};

/// Rademacher term L_l * R * C_S * ||T||_F / sqrt(m), constant fixed to 1.
inline double scaler_complexity(const BoundInputs& in) {
  in.validate();
  return in.loss_lipschitz * in.input_radius * in.scaler_cap * in.template_norm / std::sqrt(in.samples);
}

/// Same term for unconstrained fine-tuning of W with ||W||_F <= C_W.
inline double full_complexity(const BoundInputs& in) {
  in.validate();
  return in.loss_lipschitz * in.input_radius * in.weight_cap / std::sqrt(in.samples);
}

inline double confidence_term(const BoundInputs& in) {
  in.validate();
  return 3.0 * std::sqrt(std::log(2.0 / in.delta) / (2.0 * in.samples));
}

/// R_hat + 2 * complexity + 3 * sqrt(ln(2/delta) / 2m), up to constants.
inline double generalization_gap_bound(const BoundInputs& in, double empirical_risk) {
  return empirical_risk + 2.0 * scaler_complexity(in) + confidence_term(in);
}

}  // namespace templar
