// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace shiftmatch {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or extents that do not compose.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Arguments that violate an operation's contract (layout, placement, labels).
class SpecError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class NotPsdError : public NumericError {
 public:
  using NumericError::NumericError;
};

class IllConditionedError : public NumericError {
 public:
  using NumericError::NumericError;
};

class InsufficientDataError : public NumericError {
 public:
  using NumericError::NumericError;
};

class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, int epoch) : NumericError(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace shiftmatch
