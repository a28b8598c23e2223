// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Aggregation of per-layer weights into a single matrix with one row per
// layer (or one row per depthwise filter), and the inverse mapping.
//
// Transformer row layout, row-major within each matrix:
//   [ W_q (DxD) | W_k (DxD) | W_v (DxD) | W_o (HdxD) | W_in (DxD') | W_out (D'xD) ]

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "templar/error.hpp"
#include "templar/linalg.hpp"

namespace templar {

struct ModelDims {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t ffn = 0;  // 0 selects the default 4D

  std::size_t embed() const { return heads * head_dim; }
  std::size_t ffn_dim() const { return ffn == 0 ? 4 * embed() : ffn; }

  /// Row length of the unified matrix: D * (4Hd + 2D').
  std::uint64_t row_length() const {
    const std::uint64_t d = embed();
    return d * (4 * static_cast<std::uint64_t>(heads) * head_dim + 2 * static_cast<std::uint64_t>(ffn_dim()));
  }

  void validate() const {
    if (layers == 0 || heads == 0 || head_dim == 0) {
      throw ContractError("ModelDims: layers, heads and head_dim must be positive");
    }
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// The templated matrices of one transformer layer. Q, K, V stack heads along
/// columns: head h owns columns [h*d, (h+1)*d).
struct LayerWeights {
  Matrix q, k, v, o, in, out;

  std::array<const Matrix*, 6> parts() const { return {&q, &k, &v, &o, &in, &out}; }
  std::array<Matrix*, 6> parts() { return {&q, &k, &v, &o, &in, &out}; }

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

inline constexpr std::array<const char*, 6> kLayerMatrixNames = {"W_q", "W_k", "W_v", "W_o", "W_in", "W_out"};

/// Expected (rows, cols) of each LayerWeights part.
inline std::array<std::pair<std::size_t, std::size_t>, 6> layer_shapes(const ModelDims& dims) {
  const std::size_t d = dims.embed(), f = dims.ffn_dim(), hd = dims.heads * dims.head_dim;
  return {{{d, d}, {d, d}, {d, d}, {hd, d}, {d, f}, {f, d}}};
}

inline LayerWeights zero_layer(const ModelDims& dims) {
  LayerWeights lw;
  auto shapes = layer_shapes(dims);
  auto parts = lw.parts();
  for (std::size_t k = 0; k < 6; ++k) *parts[k] = Matrix(shapes[k].first, shapes[k].second);
  return lw;
}

inline Matrix pack_transformer(const std::vector<LayerWeights>& weights, const ModelDims& dims) {
  dims.validate();
  if (weights.size() != dims.layers) {
    throw ContractError("pack_transformer: got " + std::to_string(weights.size()) + " layers, dims say " +
                        std::to_string(dims.layers));
  }
  const auto shapes = layer_shapes(dims);
  Matrix w(dims.layers, static_cast<std::size_t>(dims.row_length()));
  for (std::size_t l = 0; l < weights.size(); ++l) {
    auto row = w.row(l);
    std::size_t off = 0;
    const auto parts = weights[l].parts();
    for (std::size_t k = 0; k < 6; ++k) {
      const Matrix& m = *parts[k];
      if (m.rows() != shapes[k].first || m.cols() != shapes[k].second) {
        throw ContractError("pack_transformer: layer " + std::to_string(l) + " " + kLayerMatrixNames[k] +
                            " is " + m.shape_str() + ", expected " + std::to_string(shapes[k].first) + "x" +
                            std::to_string(shapes[k].second));
      }
      for (double v : m.values()) row[off++] = v;
    }
  }
  return w;
}

inline std::vector<LayerWeights> unpack_transformer(const Matrix& w, const ModelDims& dims) {
  dims.validate();
  if (w.rows() != dims.layers || w.cols() != dims.row_length()) {
    throw ContractError("unpack_transformer: matrix " + w.shape_str() + " does not match dims " +
                        std::to_string(dims.layers) + "x" + std::to_string(dims.row_length()));
  }
  std::vector<LayerWeights> out;
  out.reserve(dims.layers);
  for (std::size_t l = 0; l < dims.layers; ++l) {
    LayerWeights lw = zero_layer(dims);
    auto row = w.row(l);
    std::size_t off = 0;
    for (Matrix* m : lw.parts())
      for (double& v : m->values()) v = row[off++];
    out.push_back(std::move(lw));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Depthwise convolution stages

/// Hierarchical conv geometry: stage s has C_s = 2^s * C_1 channels (0-based s)
/// and blocks[s] blocks, each with one depthwise k x k filter per channel.
struct ConvStageDims {
  std::size_t base_channels = 0;
  std::vector<std::size_t> blocks;
  std::size_t kernel = 7;

  std::size_t stages() const { return blocks.size(); }
  std::size_t channels(std::size_t stage) const { return base_channels << stage; }
  std::size_t taps() const { return kernel * kernel; }

  /// Total number of depthwise filters, sum_s C_s * L_s.
  std::size_t filters() const {
    std::size_t p = 0;
    for (std::size_t s = 0; s < blocks.size(); ++s) p += channels(s) * blocks[s];
    return p;
  }
  std::size_t row_width() const { return base_channels * taps(); }

  void validate() const {
    if (base_channels == 0 || kernel == 0 || blocks.empty()) {
      throw ContractError("ConvStageDims: base_channels, kernel and stage list must be non-empty");
    }
  }
};

/// kernels[stage][block] is a C_s x k^2 matrix (one flattened filter per row).
using DepthwiseKernels = std::vector<std::vector<Matrix>>;

/// One row per filter, ordered stage, then block, then channel. Row width is
/// C_1 * k^2; channel c writes its k^2 taps into slot (c mod C_1), so the C_s/C_1
/// rows of each channel group tile the full width. Other slots stay zero.
inline Matrix pack_depthwise_conv(const DepthwiseKernels& kernels, const ConvStageDims& dims) {
  dims.validate();
  if (kernels.size() != dims.stages()) {
    throw ContractError("pack_depthwise_conv: " + std::to_string(kernels.size()) + " stages, expected " +
                        std::to_string(dims.stages()));
  }
  const std::size_t taps = dims.taps();
  Matrix w(dims.filters(), dims.row_width());
  std::size_t row = 0;
  for (std::size_t s = 0; s < dims.stages(); ++s) {
    if (kernels[s].size() != dims.blocks[s]) {
      throw ContractError("pack_depthwise_conv: stage " + std::to_string(s) + " has " +
                          std::to_string(kernels[s].size()) + " blocks, expected " + std::to_string(dims.blocks[s]));
    }
    for (std::size_t b = 0; b < dims.blocks[s]; ++b) {
      const Matrix& k = kernels[s][b];
      if (k.rows() != dims.channels(s) || k.cols() != taps) {
        throw ContractError("pack_depthwise_conv: stage " + std::to_string(s) + " block " + std::to_string(b) +
                            " kernel is " + k.shape_str() + ", expected " + std::to_string(dims.channels(s)) +
                            "x" + std::to_string(taps));
      }
      for (std::size_t c = 0; c < k.rows(); ++c, ++row) {
        const std::size_t slot = (c % dims.base_channels) * taps;
        for (std::size_t t = 0; t < taps; ++t) w(row, slot + t) = k(c, t);
      }
    }
  }
  return w;
}

inline DepthwiseKernels unpack_depthwise_conv(const Matrix& w, const ConvStageDims& dims) {
  dims.validate();
  if (w.rows() != dims.filters() || w.cols() != dims.row_width()) {
    throw ContractError("unpack_depthwise_conv: matrix " + w.shape_str() + " does not match " +
                        std::to_string(dims.filters()) + "x" + std::to_string(dims.row_width()));
  }
  const std::size_t taps = dims.taps();
  DepthwiseKernels out(dims.stages());
  std::size_t row = 0;
  for (std::size_t s = 0; s < dims.stages(); ++s) {
    for (std::size_t b = 0; b < dims.blocks[s]; ++b) {
      Matrix k(dims.channels(s), taps);
      for (std::size_t c = 0; c < k.rows(); ++c, ++row) {
        const std::size_t slot = (c % dims.base_channels) * taps;
        for (std::size_t t = 0; t < taps; ++t) k(c, t) = w(row, slot + t);
      }
      out[s].push_back(std::move(k));
    }
  }
  return out;
}

}  // namespace templar
