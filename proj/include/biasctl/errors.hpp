#pragma once

#include <stdexcept>
#include <string>

namespace biasctl {

/// Caller violated a precondition (bad index, out-of-range hyperparameter, malformed config).
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

/// A model is internally inconsistent (e.g. transition rows that are not distributions).
class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace biasctl
