#pragma once

#include <stdexcept>
#include <string>

namespace lure {

// Base of every error the library raises on purpose. Anything else escaping
// to the CLI is treated as an internal failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or unsupported configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing/unreadable files, unknown prompts, malformed inputs.
class InputError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes or channel counts that violate an operation's contract.
class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or diverged optimisation.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace lure
