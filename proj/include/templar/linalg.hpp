// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major matrices in double precision, plus the handful of kernels
// the rest of the library needs: Kronecker products, a one-sided Jacobi SVD,
// norms, and a seedable random source.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "templar/error.hpp"

namespace templar {

namespace detail {
inline std::atomic<std::size_t>& element_budget_slot() {
  static std::atomic<std::size_t> budget{std::size_t{1} << 26};
  return budget;
}
}  // namespace detail

/// Largest number of entries a single Matrix may hold.
inline std::size_t element_budget() { return detail::element_budget_slot().load(); }
inline void set_element_budget(std::size_t entries) { detail::element_budget_slot().store(entries); }

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols) {
    check_budget(rows, cols);
    data_.assign(rows * cols, fill);
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    check_budget(rows, cols);
    if (data_.size() != rows * cols) {
      throw ContractError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ContractError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix& operator+=(const Matrix& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  static void check_budget(std::size_t rows, std::size_t cols) {
    if (cols != 0 && rows > std::numeric_limits<std::size_t>::max() / cols) {
      throw SizingError("Matrix: " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " overflows size_t");
    }
    if (rows * cols > element_budget()) {
      throw SizingError("Matrix: " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " exceeds element budget of " + std::to_string(element_budget()));
    }
  }
  void require_same(const Matrix& o, const char* op) const {
    if (!same_shape(o)) {
      throw ContractError(std::string("Matrix ") + op + ": shape " + shape_str() + " vs " +
                          o.shape_str());
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: " + a.shape_str() + " * " + b.shape_str());
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto crow = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ContractError("hadamard: " + a.shape_str() + " vs " + b.shape_str());
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.values()[i] *= b.values()[i];
  return c;
}

inline double frobenius_norm(const Matrix& m) {
  // Scaled accumulation keeps huge/tiny entries from overflowing the square.
  double scale = 0.0;
  for (double v : m.values()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0.0;
  double acc = 0.0;
  for (double v : m.values()) {
    const double s = v / scale;
    acc += s * s;
  }
  return scale * std::sqrt(acc);
}

inline double squared_norm(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.values()) acc += v * v;
  return acc;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ContractError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
  return d;
}

/// Standard Kronecker product: out[i*p + k, j*q + l] = a[i,j] * b[k,l].
inline Matrix kronecker(const Matrix& a, const Matrix& b) {
  const std::size_t p = b.rows(), q = b.cols();
  const std::size_t out_rows = a.rows() * p;
  const std::size_t out_cols = a.cols() * q;
  if ((p != 0 && out_rows / p != a.rows()) || (q != 0 && out_cols / q != a.cols()) ||
      (out_cols != 0 && out_rows > element_budget() / out_cols)) {
    throw SizingError("kronecker: " + a.shape_str() + " (x) " + b.shape_str() +
                      " exceeds element budget of " + std::to_string(element_budget()));
  }
  Matrix out(out_rows, out_cols);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t k = 0; k < p; ++k)
        for (std::size_t l = 0; l < q; ++l) out(i * p + k, j * q + l) = aij * b(k, l);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Random numbers

/// Seedable generator. The engine is std::mt19937_64; the uniform and normal
/// transforms are written out here because std:: distributions are not
/// required to produce the same stream across standard library vendors.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::uniform_int: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = rad * std::sin(theta);
    has_spare_ = true;
    return rad * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Matrix random_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal(0.0, stddev);
  return m;
}

inline Matrix random_uniform(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                             double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = lo + (hi - lo) * rng.uniform();
  return m;
}

// ---------------------------------------------------------------------------
// Singular value decomposition

struct SvdResult {
  Matrix u;                   // m x r
  std::vector<double> sigma;  // r values, non-increasing
  Matrix v;                   // n x r
};

struct SvdOptions {
  int max_sweeps = 60;
  /// A column pair is orthogonal once |<a_p, a_q>| <= tol * |a_p| |a_q|.
  double tol = 1e-12;
};

namespace detail {

// Hestenes one-sided Jacobi on a tall (rows >= cols) matrix.
inline SvdResult jacobi_svd_tall(const Matrix& input, const SvdOptions& opt) {
  const std::size_t m = input.rows(), n = input.cols();
  // Work column-major so each column is contiguous.
  std::vector<double> a(m * n), v(n * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) a[j * m + i] = input(i, j);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  const double norm2 = squared_norm(input);
  const double abs_floor = 1e-24 * norm2;
  auto col = [&](std::vector<double>& buf, std::size_t stride, std::size_t j) {
    return buf.data() + j * stride;
  };

  bool converged = false;
  int sweep = 0;
  for (; sweep < opt.max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* ap = col(a, m, p);
        double* aq = col(a, m, q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += ap[i] * ap[i];
          beta += aq[i] * aq[i];
          gamma += ap[i] * aq[i];
        }
        if (std::abs(gamma) <= opt.tol * std::sqrt(alpha * beta) || std::abs(gamma) <= abs_floor) {
          continue;
        }
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = ap[i], y = aq[i];
          ap[i] = c * x - s * y;
          aq[i] = s * x + c * y;
        }
        double* vp = col(v, n, p);
        double* vq = col(v, n, q);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
  }
  if (!converged) {
    throw NumericalError("svd: one-sided Jacobi did not converge after " + std::to_string(sweep) +
                         " sweeps");
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    const double* aj = col(a, m, j);
    for (std::size_t i = 0; i < m; ++i) s += aj[i] * aj[i];
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double sigma_max = n == 0 ? 0.0 : norms[order[0]];
  const double rank_tol = static_cast<double>(std::max(m, n)) *
                          std::numeric_limits<double>::epsilon() * sigma_max;
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.sigma[k] = norms[j];
    const double* vj = col(v, n, j);
    for (std::size_t i = 0; i < n; ++i) out.v(i, k) = vj[i];
    if (norms[j] > rank_tol && norms[j] > 0.0) {
      const double* aj = col(a, m, j);
      for (std::size_t i = 0; i < m; ++i) out.u(i, k) = aj[i] / norms[j];
      filled[k] = true;
    }
  }

  // Left vectors of (numerically) zero singular values: complete the basis
  // by Gram-Schmidt over the standard basis.
  std::size_t probe = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (filled[k]) continue;
    for (; probe < m; ++probe) {
      std::vector<double> e(m, 0.0);
      e[probe] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t other = 0; other < n; ++other) {
          if (!filled[other]) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += out.u(i, other) * e[i];
          for (std::size_t i = 0; i < m; ++i) e[i] -= dot * out.u(i, other);
        }
      }
      double len = 0.0;
      for (double x : e) len += x * x;
      len = std::sqrt(len);
      if (len > 0.5) {
        for (std::size_t i = 0; i < m; ++i) out.u(i, k) = e[i] / len;
        filled[k] = true;
        ++probe;
        break;
      }
    }
    if (!filled[k]) throw NumericalError("svd: failed to complete orthonormal basis");
  }
  return out;
}

}  // namespace detail

/// Thin SVD: input = u * diag(sigma) * v^T with r = min(rows, cols).
inline SvdResult svd(const Matrix& m, const SvdOptions& opt = {}) {
  if (m.rows() == 0 || m.cols() == 0) throw ContractError("svd: empty matrix " + m.shape_str());
  if (!m.all_finite()) throw NumericalError("svd: input contains non-finite entries");
  if (m.rows() >= m.cols()) return detail::jacobi_svd_tall(m, opt);
  SvdResult t = detail::jacobi_svd_tall(transpose(m), opt);
  return SvdResult{std::move(t.v), std::move(t.sigma), std::move(t.u)};
}

/// u * diag(sigma) * v^T, optionally keeping only the leading `rank` terms.
inline Matrix svd_compose(const SvdResult& s, std::size_t rank = std::numeric_limits<std::size_t>::max()) {
  const std::size_t r = std::min(rank, s.sigma.size());
  Matrix out(s.u.rows(), s.v.rows());
  for (std::size_t k = 0; k < r; ++k)
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const double uk = s.u(i, k) * s.sigma[k];
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += uk * s.v(j, k);
    }
  return out;
}

}  // namespace templar
