// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace diffcap {

// Base of every error raised by the library. The C API maps each subclass to
// a distinct status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value. `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Bad argument to an operation (out-of-range timestep, shape mismatch, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared in a loss or activation.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Dataset / checkpoint loading failures.
class LoadError : public Error {
 public:
  enum class Kind { kIo, kParse, kMagic, kTruncated, kIndex };
  LoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace diffcap
