// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mednext {

// Base of every error the library throws. `category()` is a stable,
// machine-readable tag used by the CLI for its single-line error output.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept = 0;
};

// Invalid shapes, kernel sizes, channel plans or model configurations.
class ConfigurationError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "configuration"; }
};

// API misuse, e.g. calling backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "usage"; }
};

// Source and target of a weight transfer do not line up.
class CompatibilityError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "compatibility"; }
};

class GenerationError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "generation"; }
};

// Raised by the training loop when the loss stops being finite.
class TrainingError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "training"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

}  // namespace mednext
