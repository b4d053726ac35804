#pragma once

#include <stdexcept>
#include <string>

namespace eface {

// Invalid hyperparameters or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor shapes or pyramid structure that do not fit together.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input image dimensions not divisible by the pyramid's coarsest stride.
class SizingError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

// A NaN or infinity reached a place where finite values are required.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace eface
