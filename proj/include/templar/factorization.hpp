// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Weight templates, weight scalers and the Kronecker composition
//
//   W = sum_i (M o T_i) (x) S_i,     T_i in R^{1 x A},  S_i in R^{L x B},  A*B = P,
//
// which, entry by entry, reads W[l, a*B + b] = sum_i T~_i[a] * S_i[l, b].
//
// The rearrangement R maps W (L x P) to an (L*B) x A matrix whose row l*B + b
// is the strided slice (W[l, a*B + b])_a. Under R each Kronecker term becomes
// the outer product vec(S_i) T_i, so the best rank-N composition of a given W
// is a truncated SVD of R(W).

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "templar/error.hpp"
#include "templar/linalg.hpp"
#include "templar/mask.hpp"

namespace templar {

struct FactorizationConfig {
  std::size_t n_templates = 1;
  std::size_t r1 = 1;
  std::size_t r2 = 1;

  std::size_t span() const { return r1 * r2; }

  void validate() const {
    if (n_templates < 1 || r1 < 1 || r2 < 1) {
      throw ContractError("FactorizationConfig: N, r1 and r2 must all be >= 1");
    }
  }

  /// N * r1 * r2 < L * P. Violations are allowed but defeat template reuse.
  bool has_bottleneck(std::size_t layers, std::uint64_t row_length) const {
    return static_cast<std::uint64_t>(n_templates) * span() < static_cast<std::uint64_t>(layers) * row_length;
  }

  friend bool operator==(const FactorizationConfig&, const FactorizationConfig&) = default;
};

/// N templates stored as the rows of an N x A matrix; row i is the r1 x r2
/// grid of T_i flattened row-major.
struct TemplateBank {
  FactorizationConfig config;
  Matrix templates;

  static TemplateBank zeros(const FactorizationConfig& cfg) {
    cfg.validate();
    return {cfg, Matrix(cfg.n_templates, cfg.span())};
  }

  std::size_t size() const { return config.n_templates; }
  std::size_t parameter_count() const { return templates.size(); }

  void validate() const {
    config.validate();
    if (templates.rows() != config.n_templates || templates.cols() != config.span()) {
      throw ContractError("TemplateBank: storage " + templates.shape_str() + " does not match N=" +
                          std::to_string(config.n_templates) + ", A=" + std::to_string(config.span()));
    }
  }

  /// FNV-1a over the raw bytes of geometry and values; used to prove a bank was not touched.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t word) {
      for (int k = 0; k < 8; ++k) {
        h ^= (word >> (8 * k)) & 0xffu;
        h *= 1099511628211ull;
      }
    };
    mix(config.n_templates);
    mix(config.r1);
    mix(config.r2);
    for (double v : templates.values()) mix(std::bit_cast<std::uint64_t>(v));
    return h;
  }

  friend bool operator==(const TemplateBank&, const TemplateBank&) = default;
};

/// N scaler matrices, each L x B.
struct ScalerSet {
  std::size_t layers = 0;
  std::size_t b_cols = 0;
  std::vector<Matrix> scalers;

  static ScalerSet zeros(std::size_t n, std::size_t layers, std::size_t b_cols) {
    ScalerSet s{layers, b_cols, {}};
    s.scalers.assign(n, Matrix(layers, b_cols));
    return s;
  }

  /// Scalers for an L x P matrix under `cfg`; P must be a multiple of r1*r2.
  static ScalerSet for_geometry(const FactorizationConfig& cfg, std::size_t layers, std::uint64_t row_length) {
    cfg.validate();
    if (row_length % cfg.span() != 0) {
      throw ContractError("ScalerSet: row length P=" + std::to_string(row_length) +
                          " is not divisible by r1*r2=" + std::to_string(cfg.span()));
    }
    return zeros(cfg.n_templates, layers, static_cast<std::size_t>(row_length / cfg.span()));
  }

  std::size_t size() const { return scalers.size(); }
  std::size_t parameter_count() const { return scalers.size() * layers * b_cols; }

  void validate() const {
    for (std::size_t i = 0; i < scalers.size(); ++i) {
      if (scalers[i].rows() != layers || scalers[i].cols() != b_cols) {
        throw ContractError("ScalerSet: scaler " + std::to_string(i) + " is " + scalers[i].shape_str() +
                            ", expected " + std::to_string(layers) + "x" + std::to_string(b_cols));
      }
    }
  }

  friend bool operator==(const ScalerSet&, const ScalerSet&) = default;
};

struct RearrangeDims {
  std::size_t layers = 0;  // L
  std::size_t span = 0;    // A
  std::size_t blocks = 0;  // B

  std::size_t row_length() const { return span * blocks; }

  /// Geometry for an L x P matrix with template span A.
  static RearrangeDims of(std::size_t layers, std::size_t row_length, std::size_t span) {
    if (span == 0 || row_length % span != 0) {
      throw ContractError("RearrangeDims: P=" + std::to_string(row_length) + " is not divisible by A=" +
                          std::to_string(span));
    }
    return {layers, span, row_length / span};
  }
};

namespace detail {

inline void check_pair(const TemplateBank& bank, const ScalerSet& scalers, const char* op) {
  bank.validate();
  scalers.validate();
  if (scalers.size() != bank.size()) {
    throw ContractError(std::string(op) + ": bank has " + std::to_string(bank.size()) + " templates but " +
                        std::to_string(scalers.size()) + " scalers");
  }
}

inline void check_mask(const TemplateBank& bank, const StructuredMask* mask, const char* op) {
  if (mask && (mask->r1 != bank.config.r1 || mask->r2 != bank.config.r2 || mask->values.size() != bank.config.span())) {
    throw ContractError(std::string(op) + ": mask grid (" + std::to_string(mask->r1) + ", " + std::to_string(mask->r2) +
                        ") does not match templates (" + std::to_string(bank.config.r1) + ", " +
                        std::to_string(bank.config.r2) + ")");
  }
}

}  // namespace detail

/// Masked templates M o T_i as an N x A matrix.
inline Matrix masked_templates(const TemplateBank& bank, const StructuredMask* mask) {
  detail::check_mask(bank, mask, "masked_templates");
  Matrix t = bank.templates;
  if (mask) {
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t a = 0; a < t.cols(); ++a) t(i, a) *= mask->values[a];
  }
  return t;
}

/// W = sum_i (M o T_i) (x) S_i, an L x (A*B) matrix.
inline Matrix reconstruct(const TemplateBank& bank, const ScalerSet& scalers, const StructuredMask* mask = nullptr) {
  detail::check_pair(bank, scalers, "reconstruct");
  const Matrix t = masked_templates(bank, mask);
  const std::size_t span = bank.config.span(), blocks = scalers.b_cols;
  Matrix w(scalers.layers, span * blocks);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const Matrix& s = scalers.scalers[i];
    for (std::size_t l = 0; l < scalers.layers; ++l) {
      auto wrow = w.row(l);
      auto srow = s.row(l);
      for (std::size_t a = 0; a < span; ++a) {
        const double ta = t(i, a);
        if (ta == 0.0) continue;
        double* dst = wrow.data() + a * blocks;
        for (std::size_t b = 0; b < blocks; ++b) dst[b] += ta * srow[b];
      }
    }
  }
  return w;
}

inline Matrix reconstruct(const TemplateBank& bank, const ScalerSet& scalers, const StructuredMask& mask) {
  return reconstruct(bank, scalers, &mask);
}

/// R(W): row l*B + b holds (W[l, a*B + b]) for a = 0..A-1.
inline Matrix rearrange(const Matrix& w, const RearrangeDims& dims) {
  if (w.rows() != dims.layers || w.cols() != dims.row_length() || dims.span == 0) {
    throw ContractError("rearrange: matrix " + w.shape_str() + " does not match L=" + std::to_string(dims.layers) +
                        ", A*B=" + std::to_string(dims.span) + "*" + std::to_string(dims.blocks));
  }
  Matrix out(dims.layers * dims.blocks, dims.span);
  for (std::size_t l = 0; l < dims.layers; ++l)
    for (std::size_t a = 0; a < dims.span; ++a)
      for (std::size_t b = 0; b < dims.blocks; ++b) out(l * dims.blocks + b, a) = w(l, a * dims.blocks + b);
  return out;
}

inline Matrix unrearrange(const Matrix& wt, const RearrangeDims& dims) {
  if (wt.rows() != dims.layers * dims.blocks || wt.cols() != dims.span || dims.span == 0) {
    throw ContractError("unrearrange: matrix " + wt.shape_str() + " does not match (L*B)xA = " +
                        std::to_string(dims.layers * dims.blocks) + "x" + std::to_string(dims.span));
  }
  Matrix w(dims.layers, dims.row_length());
  for (std::size_t l = 0; l < dims.layers; ++l)
    for (std::size_t a = 0; a < dims.span; ++a)
      for (std::size_t b = 0; b < dims.blocks; ++b) w(l, a * dims.blocks + b) = wt(l * dims.blocks + b, a);
  return w;
}

/// Grid for a bare span A: r1 = r2 = sqrt(A) when A is a perfect square, else 1 x A.
inline FactorizationConfig grid_for_span(std::size_t n_templates, std::size_t span) {
  std::size_t r = static_cast<std::size_t>(std::sqrt(static_cast<double>(span)));
  while (r * r > span) --r;
  while ((r + 1) * (r + 1) <= span) ++r;
  return r * r == span ? FactorizationConfig{n_templates, r, r} : FactorizationConfig{n_templates, 1, span};
}

struct FitResult {
  TemplateBank bank;
  ScalerSet scalers;
  double residual = 0.0;     // sqrt of the discarded squared singular values
  std::vector<double> sigma;  // full spectrum of R(w)
};

/// Best rank-N Kronecker composition of `w` in Frobenius norm.
inline FitResult fit(const Matrix& w, const FactorizationConfig& cfg) {
  cfg.validate();
  const RearrangeDims dims = RearrangeDims::of(w.rows(), w.cols(), cfg.span());
  const std::size_t max_rank = std::min(dims.layers * dims.blocks, dims.span);
  if (cfg.n_templates > max_rank) {
    throw ContractError("fit: N=" + std::to_string(cfg.n_templates) + " exceeds min(L*B, A)=" +
                        std::to_string(max_rank));
  }
  const SvdResult s = svd(rearrange(w, dims));
  FitResult out{TemplateBank::zeros(cfg), ScalerSet::zeros(cfg.n_templates, dims.layers, dims.blocks), 0.0, s.sigma};
  for (std::size_t i = 0; i < cfg.n_templates; ++i) {
    for (std::size_t a = 0; a < dims.span; ++a) out.bank.templates(i, a) = s.v(a, i);
    Matrix& si = out.scalers.scalers[i];
    for (std::size_t l = 0; l < dims.layers; ++l)
      for (std::size_t b = 0; b < dims.blocks; ++b) si(l, b) = s.sigma[i] * s.u(l * dims.blocks + b, i);
  }
  double tail = 0.0;
  for (std::size_t j = cfg.n_templates; j < s.sigma.size(); ++j) tail += s.sigma[j] * s.sigma[j];
  out.residual = std::sqrt(tail);
  return out;
}

struct KronGradients {
  Matrix templates;             // N x A
  std::vector<Matrix> scalers;  // N of L x B
};

/// Pulls dLoss/dW back through W = sum_i (M o T_i) (x) S_i:
///   dT_i[a]    = M[a] * sum_{l,b} G[l, a*B + b] S_i[l, b]
///   dS_i[l, b] = sum_a G[l, a*B + b] (M o T_i)[a]
inline KronGradients kron_gradients(const Matrix& g, const TemplateBank& bank, const ScalerSet& scalers,
                                    const StructuredMask* mask = nullptr) {
  detail::check_pair(bank, scalers, "kron_gradients");
  const std::size_t span = bank.config.span(), blocks = scalers.b_cols;
  if (g.rows() != scalers.layers || g.cols() != span * blocks) {
    throw ContractError("kron_gradients: upstream " + g.shape_str() + " does not match " +
                        std::to_string(scalers.layers) + "x" + std::to_string(span * blocks));
  }
  const Matrix t = masked_templates(bank, mask);
  KronGradients out{Matrix(bank.size(), span), {}};
  out.scalers.assign(bank.size(), Matrix(scalers.layers, blocks));
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const Matrix& s = scalers.scalers[i];
    Matrix& ds = out.scalers[i];
    for (std::size_t l = 0; l < scalers.layers; ++l) {
      auto grow = g.row(l);
      auto srow = s.row(l);
      auto dsrow = ds.row(l);
      for (std::size_t a = 0; a < span; ++a) {
        const double* gblk = grow.data() + a * blocks;
        double acc = 0.0;
        const double ta = t(i, a);
        for (std::size_t b = 0; b < blocks; ++b) {
          acc += gblk[b] * srow[b];
          dsrow[b] += gblk[b] * ta;
        }
        out.templates(i, a) += acc;
      }
    }
    if (mask) {
      for (std::size_t a = 0; a < span; ++a)
        if (mask->values[a] == 0.0) out.templates(i, a) = 0.0;
    }
  }
  return out;
}

inline KronGradients kron_gradients(const Matrix& g, const TemplateBank& bank, const ScalerSet& scalers,
                                    const StructuredMask& mask) {
  return kron_gradients(g, bank, scalers, &mask);
}

/// ||w - reconstruct(bank, scalers)||_F
inline double reconstruction_error(const Matrix& w, const TemplateBank& bank, const ScalerSet& scalers) {
  const Matrix r = reconstruct(bank, scalers);
  if (!r.same_shape(w)) {
    throw ContractError("reconstruction_error: target " + w.shape_str() + " vs reconstruction " + r.shape_str());
  }
  return frobenius_norm(w - r);
}

}  // namespace templar
