#pragma once

#include <stdexcept>
#include <string>

namespace mtg {

/// Bad arguments or inputs that violate a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Tensor or image dimensions that do not line up.
class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& what) : ValidationError(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset layout problems (missing masks, inconsistent sizes).
class LoadError : public IoError {
 public:
  explicit LoadError(const std::string& what) : IoError(what) {}
};

/// A non-finite value showed up during training.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mtg
