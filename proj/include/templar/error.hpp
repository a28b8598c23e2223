// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace templar {

/// Violated precondition: shape mismatch, bad geometry, out-of-range argument.
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

/// A requested allocation exceeds the configured element budget.
class SizingError : public std::length_error {
 public:
  explicit SizingError(const std::string& what) : std::length_error(what) {}
};

/// An iterative routine failed to converge, or a value became non-finite.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Training loss left the finite / bounded region.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, double loss)
      : std::runtime_error("training diverged at step " + std::to_string(step) +
                           " (loss=" + std::to_string(loss) + ")"),
        step_(step),
        loss_(loss) {}

  int step() const { return step_; }
  double loss() const { return loss_; }

 private:
  int step_;
  double loss_;
};

}  // namespace templar
