// Copyright 2026 The lorachem Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lorachem {

/// Tensor/weight dimensions do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (non-scalar backward, bad rank, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A sequence longer than the model's configured maximum. Never truncated
/// silently.
class LengthError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// NaN/Inf showed up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input files or records that cannot be used.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary checkpoint or adapter file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lorachem
