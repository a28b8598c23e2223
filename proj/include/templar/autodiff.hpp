// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape records every operation in creation order, so inputs always precede
// their consumers and a single reverse walk computes all vector-Jacobian
// products. Build a fresh Tape for each forward pass.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "templar/error.hpp"
#include "templar/linalg.hpp"

namespace templar::ad {

class Tape;

/// Handle to a node on a Tape. Shape is fixed at creation.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

/// Accumulates the VJP of one node into the gradients of its inputs.
/// Entries of `input_grads` are null for inputs that need no gradient.
using Vjp = std::function<void(const Tape&, const Matrix& upstream,
                               std::span<Matrix* const> input_grads)>;

class Gradients {
 public:
  const Matrix& operator[](const Var& v) const {
    auto it = grads_.find(v.id);
    if (it == grads_.end()) throw ContractError("Gradients: node " + std::to_string(v.id) + " is not a leaf");
    return it->second;
  }
  bool contains(const Var& v) const { return grads_.count(v.id) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Matrix> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable input; backward() reports its gradient.
  Var leaf(Matrix value) { return push(std::move(value), {}, nullptr, "leaf", true, true); }

  /// A non-differentiable input.
  Var constant(Matrix value) { return push(std::move(value), {}, nullptr, "constant", false, false); }

  const Matrix& value(const Var& v) const { return nodes_.at(v.id).value; }
  std::size_t size() const { return nodes_.size(); }
  const char* op_name(const Var& v) const { return nodes_.at(v.id).op; }

  /// Records an operation node. `vjp` may be null only if no input needs a gradient.
  Var record(Matrix value, std::vector<std::size_t> inputs, Vjp vjp, const char* op) {
    bool needs = false;
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) throw ContractError(std::string(op) + ": input precedes no node");
      needs = needs || nodes_[in].requires_grad;
    }
    return push(std::move(value), std::move(inputs), std::move(vjp), op, needs, false);
  }

  /// Reverse sweep from a scalar node; `seed` scales the upstream gradient.
  Gradients backward(const Var& loss, double seed = 1.0) const {
    check_owned(loss, "backward");
    if (loss.rows != 1 || loss.cols != 1) {
      throw ContractError("backward: loss must be 1x1, got " + loss.shape_str());
    }
    std::vector<Matrix> grads(loss.id + 1);
    grads[loss.id] = Matrix(1, 1, seed);
    std::vector<Matrix*> slots;
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      const Node& node = nodes_[k];
      if (grads[k].empty() || !node.requires_grad || node.inputs.empty()) continue;
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t j = 0; j < node.inputs.size(); ++j) {
        const std::size_t in = node.inputs[j];
        if (!nodes_[in].requires_grad) continue;
        if (grads[in].empty()) grads[in] = Matrix(nodes_[in].value.rows(), nodes_[in].value.cols());
        slots[j] = &grads[in];
      }
      node.vjp(*this, grads[k], slots);
    }
    Gradients out;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      if (!nodes_[k].is_leaf) continue;
      if (k < grads.size() && !grads[k].empty()) {
        out.grads_.emplace(k, std::move(grads[k]));
      } else {
        out.grads_.emplace(k, Matrix(nodes_[k].value.rows(), nodes_[k].value.cols()));
      }
    }
    return out;
  }

  void check_owned(const Var& v, const char* op) const {
    if (v.tape != this || v.id >= nodes_.size()) {
      throw ContractError(std::string(op) + ": variable does not belong to this tape");
    }
  }

 private:
  struct Node {
    Matrix value;
    std::vector<std::size_t> inputs;
    Vjp vjp;
    const char* op;
    bool requires_grad;
    bool is_leaf;
  };

  Var push(Matrix value, std::vector<std::size_t> inputs, Vjp vjp, const char* op, bool needs,
           bool is_leaf) {
    if (needs && !is_leaf && !vjp) throw ContractError(std::string(op) + ": missing vjp");
    Var v{this, nodes_.size(), value.rows(), value.cols()};
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(vjp), op, needs, is_leaf});
    return v;
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError(std::string(op) + ": operands on different tapes");
  return *a.tape;
}

[[noreturn]] inline void shape_error(const char* op, const Var& a, const Var& b) {
  throw ContractError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto yr = y.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : xr) mx = std::max(mx, v);
    double s = 0.0;
    for (std::size_t j = 0; j < xr.size(); ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (double& v : yr) v /= s;
  }
  return y;
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  if (a.cols != b.rows) detail::shape_error("matmul", a, b);
  return t.record(templar::matmul(t.value(a), t.value(b)), {a.id, b.id},
                  [a, b](const Tape& tp, const Matrix& g, std::span<Matrix* const> out) {
                    if (out[0]) *out[0] += templar::matmul(g, templar::transpose(tp.value(b)));
                    if (out[1]) *out[1] += templar::matmul(templar::transpose(tp.value(a)), g);
                  },
                  "matmul");
}

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b, "add");
  if (a.rows != b.rows || a.cols != b.cols) detail::shape_error("add", a, b);
  return t.record(t.value(a) + t.value(b), {a.id, b.id},
                  [](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (out[0]) *out[0] += g;
                    if (out[1]) *out[1] += g;
                  },
                  "add");
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b, "sub");
  if (a.rows != b.rows || a.cols != b.cols) detail::shape_error("sub", a, b);
  return t.record(t.value(a) - t.value(b), {a.id, b.id},
                  [](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (out[0]) *out[0] += g;
                    if (out[1]) *out[1] -= g;
                  },
                  "sub");
}

/// x + bias, with a 1 x cols bias broadcast over rows.
inline Var add_row(const Var& x, const Var& bias) {
  Tape& t = detail::same_tape(x, bias, "add_row");
  if (bias.rows != 1 || bias.cols != x.cols) detail::shape_error("add_row", x, bias);
  Matrix y = t.value(x);
  const Matrix& b = t.value(bias);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b(0, j);
  return t.record(std::move(y), {x.id, bias.id},
                  [](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (out[0]) *out[0] += g;
                    if (out[1]) {
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) (*out[1])(0, j) += g(i, j);
                    }
                  },
                  "add_row");
}

inline Var scale(const Var& a, double s) {
  Tape& t = *a.tape;
  return t.record(t.value(a) * s, {a.id},
                  [s](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (out[0]) *out[0] += g * s;
                  },
                  "scale");
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b, "mul");
  if (a.rows != b.rows || a.cols != b.cols) detail::shape_error("mul", a, b);
  return t.record(hadamard(t.value(a), t.value(b)), {a.id, b.id},
                  [a, b](const Tape& tp, const Matrix& g, std::span<Matrix* const> out) {
                    if (out[0]) *out[0] += hadamard(g, tp.value(b));
                    if (out[1]) *out[1] += hadamard(g, tp.value(a));
                  },
                  "mul");
}

inline Var transpose(const Var& a) {
  Tape& t = *a.tape;
  return t.record(templar::transpose(t.value(a)), {a.id},
                  [](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (out[0]) *out[0] += templar::transpose(g);
                  },
                  "transpose");
}

inline Var softmax_rows(const Var& a) {
  Tape& t = *a.tape;
  Matrix y = detail::softmax_rows(t.value(a));
  return t.record(y, {a.id},
                  [y](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (!out[0]) return;
                    for (std::size_t i = 0; i < y.rows(); ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                      for (std::size_t j = 0; j < y.cols(); ++j) (*out[0])(i, j) += y(i, j) * (g(i, j) - dot);
                    }
                  },
                  "softmax_rows");
}

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer normalization with 1 x cols gain and shift.
inline Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = kLayerNormEps) {
  Tape& t = detail::same_tape(x, gamma, "layernorm");
  detail::same_tape(x, beta, "layernorm");
  if (gamma.rows != 1 || gamma.cols != x.cols) detail::shape_error("layernorm", x, gamma);
  if (beta.rows != 1 || beta.cols != x.cols) detail::shape_error("layernorm", x, beta);
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gamma);
  const Matrix& bv = t.value(beta);
  const std::size_t n = xv.cols();
  Matrix xhat(xv.rows(), n), y(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mu = 0.0;
    for (double v : xv.row(i)) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xv.row(i)) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
      y(i, j) = gv(0, j) * xhat(i, j) + bv(0, j);
    }
  }
  return t.record(std::move(y), {x.id, gamma.id, beta.id},
                  [xhat, inv_std, gamma](const Tape& tp, const Matrix& g, std::span<Matrix* const> out) {
                    const Matrix& gv = tp.value(gamma);
                    const std::size_t n = xhat.cols();
                    for (std::size_t i = 0; i < xhat.rows(); ++i) {
                      if (out[0]) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dxh = g(i, j) * gv(0, j);
                          m1 += dxh;
                          m2 += dxh * xhat(i, j);
                        }
                        m1 /= static_cast<double>(n);
                        m2 /= static_cast<double>(n);
                        for (std::size_t j = 0; j < n; ++j) {
                          const double dxh = g(i, j) * gv(0, j);
                          (*out[0])(i, j) += inv_std[i] * (dxh - m1 - xhat(i, j) * m2);
                        }
                      }
                      for (std::size_t j = 0; j < n; ++j) {
                        if (out[1]) (*out[1])(0, j) += g(i, j) * xhat(i, j);
                        if (out[2]) (*out[2])(0, j) += g(i, j);
                      }
                    }
                  },
                  "layernorm");
}

/// Exact GELU, x * Phi(x).
inline Var gelu(const Var& a) {
  Tape& t = *a.tape;
  Matrix y = t.value(a);
  for (double& v : y.values()) v = detail::gelu(v);
  return t.record(std::move(y), {a.id},
                  [a](const Tape& tp, const Matrix& g, std::span<Matrix* const> out) {
                    if (!out[0]) return;
                    const Matrix& x = tp.value(a);
                    for (std::size_t i = 0; i < x.size(); ++i)
                      out[0]->values()[i] += g.values()[i] * detail::gelu_grad(x.values()[i]);
                  },
                  "gelu");
}

inline Var relu(const Var& a) {
  Tape& t = *a.tape;
  Matrix y = t.value(a);
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(y), {a.id},
                  [a](const Tape& tp, const Matrix& g, std::span<Matrix* const> out) {
                    if (!out[0]) return;
                    const Matrix& x = tp.value(a);
                    for (std::size_t i = 0; i < x.size(); ++i)
                      if (x.values()[i] > 0.0) out[0]->values()[i] += g.values()[i];
                  },
                  "relu");
}

/// Rectangular block [row0, row0+rows) x [col0, col0+cols).
inline Var slice(const Var& a, std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols) {
  Tape& t = *a.tape;
  if (row0 + rows > a.rows || col0 + cols > a.cols) {
    throw ContractError("slice: block [" + std::to_string(row0) + "+" + std::to_string(rows) + ", " +
                        std::to_string(col0) + "+" + std::to_string(cols) + "] outside " + a.shape_str());
  }
  const Matrix& x = t.value(a);
  Matrix y(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) y(i, j) = x(row0 + i, col0 + j);
  return t.record(std::move(y), {a.id},
                  [row0, col0](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (!out[0]) return;
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) (*out[0])(row0 + i, col0 + j) += g(i, j);
                  },
                  "slice");
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = *parts[0].tape;
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p, "concat_cols");
    if (p.rows != parts[0].rows) detail::shape_error("concat_cols", parts[0], p);
    offsets.push_back(cols);
    cols += p.cols;
    ids.push_back(p.id);
  }
  Matrix y(parts[0].rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& x = t.value(p);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) y(i, off + j) = x(i, j);
    off += p.cols;
  }
  return t.record(std::move(y), std::move(ids),
                  [offsets](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    for (std::size_t k = 0; k < out.size(); ++k) {
                      if (!out[k]) continue;
                      for (std::size_t i = 0; i < out[k]->rows(); ++i)
                        for (std::size_t j = 0; j < out[k]->cols(); ++j) (*out[k])(i, j) += g(i, offsets[k] + j);
                    }
                  },
                  "concat_cols");
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& t = *parts[0].tape;
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p, "concat_rows");
    if (p.cols != parts[0].cols) detail::shape_error("concat_rows", parts[0], p);
    offsets.push_back(rows);
    rows += p.rows;
    ids.push_back(p.id);
  }
  Matrix y(rows, parts[0].cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& x = t.value(parts[k]);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) y(offsets[k] + i, j) = x(i, j);
  }
  return t.record(std::move(y), std::move(ids),
                  [offsets](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    for (std::size_t k = 0; k < out.size(); ++k) {
                      if (!out[k]) continue;
                      for (std::size_t i = 0; i < out[k]->rows(); ++i)
                        for (std::size_t j = 0; j < out[k]->cols(); ++j) (*out[k])(i, j) += g(offsets[k] + i, j);
                    }
                  },
                  "concat_rows");
}

inline Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::span<const Var>(parts.begin(), parts.size())); }
inline Var concat_rows(std::initializer_list<Var> parts) { return concat_rows(std::span<const Var>(parts.begin(), parts.size())); }

inline Var sum(const Var& a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.record(Matrix(1, 1, s), {a.id},
                  [](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (!out[0]) return;
                    for (double& v : out[0]->values()) v += g(0, 0);
                  },
                  "sum");
}

/// Mean over all entries, as a 1x1 node.
inline Var mean(const Var& a) {
  Tape& t = *a.tape;
  const double n = static_cast<double>(a.rows * a.cols);
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.record(Matrix(1, 1, s / n), {a.id},
                  [n](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (!out[0]) return;
                    for (double& v : out[0]->values()) v += g(0, 0) / n;
                  },
                  "mean");
}

/// Rows of `table` selected by `indices`.
inline Var gather_rows(const Var& table, std::span<const std::size_t> indices) {
  Tape& t = *table.tape;
  const Matrix& tv = t.value(table);
  Matrix y(indices.size(), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= tv.rows()) {
      throw ContractError("gather_rows: index " + std::to_string(indices[i]) + " outside " + table.shape_str());
    }
    for (std::size_t j = 0; j < tv.cols(); ++j) y(i, j) = tv(indices[i], j);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t.record(std::move(y), {table.id},
                  [idx = std::move(idx)](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (!out[0]) return;
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) (*out[0])(idx[i], j) += g(i, j);
                  },
                  "gather_rows");
}

/// Averages consecutive groups of `group` rows: (rows/group) x cols.
inline Var segment_mean_rows(const Var& a, std::size_t group) {
  Tape& t = *a.tape;
  if (group == 0 || a.rows % group != 0) {
    throw ContractError("segment_mean_rows: " + std::to_string(a.rows) + " rows not divisible by " +
                        std::to_string(group));
  }
  const Matrix& x = t.value(a);
  const std::size_t segments = a.rows / group;
  Matrix y(segments, a.cols);
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t s = 0; s < segments; ++s)
    for (std::size_t r = 0; r < group; ++r)
      for (std::size_t j = 0; j < a.cols; ++j) y(s, j) += x(s * group + r, j) * inv;
  return t.record(std::move(y), {a.id},
                  [group, inv](const Tape&, const Matrix& g, std::span<Matrix* const> out) {
                    if (!out[0]) return;
                    for (std::size_t i = 0; i < out[0]->rows(); ++i)
                      for (std::size_t j = 0; j < out[0]->cols(); ++j) (*out[0])(i, j) += g(i / group, j) * inv;
                  },
                  "segment_mean_rows");
}

/// Mean softmax cross-entropy of `logits` (batch x classes) against integer labels.
inline Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  Tape& t = *logits.tape;
  if (labels.size() != logits.rows) {
    throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                        logits.shape_str());
  }
  const Matrix& z = t.value(logits);
  Matrix p = detail::softmax_rows(z);
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= z.cols()) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                          std::to_string(z.cols()) + " classes");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z.row(i)) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z.row(i)) s += std::exp(v - mx);
    loss += mx + std::log(s) - z(i, labels[i]);
  }
  const double batch = static_cast<double>(labels.size());
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return t.record(Matrix(1, 1, loss / batch), {logits.id},
                  [p = std::move(p), lab = std::move(lab), batch](const Tape&, const Matrix& g,
                                                                  std::span<Matrix* const> out) {
                    if (!out[0]) return;
                    const double c = g(0, 0) / batch;
                    for (std::size_t i = 0; i < p.rows(); ++i)
                      for (std::size_t j = 0; j < p.cols(); ++j)
                        (*out[0])(i, j) += c * (p(i, j) - (j == lab[i] ? 1.0 : 0.0));
                  },
                  "cross_entropy");
}

// ---------------------------------------------------------------------------
// Verification

/// Builds a scalar graph from a leaf holding x.
using ScalarGraph = std::function<Var(Tape&, const Var&)>;

/// Max over entries of |analytic - numeric| / max(1, |numeric|), where numeric
/// is the central difference (f(x + h e_ij) - f(x - h e_ij)) / 2h.
inline double grad_check(const ScalarGraph& f, const Matrix& x, double h) {
  if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
  Matrix analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var y = f(tape, xv);
    analytic = tape.backward(y)[xv];
  }
  auto eval = [&](const Matrix& at) {
    Tape tape;
    Var xv = tape.leaf(at);
    return tape.value(f(tape, xv))(0, 0);
  };
  double worst = 0.0;
  Matrix probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = probe.values()[k];
    probe.values()[k] = orig + h;
    const double fp = eval(probe);
    probe.values()[k] = orig - h;
    const double fm = eval(probe);
    probe.values()[k] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic.values()[k] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace templar::ad
