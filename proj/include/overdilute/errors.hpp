#pragma once

#include <stdexcept>
#include <string>

namespace overdilute {

// Shape or inner-dimension mismatch between tensors.
struct DimensionError : std::invalid_argument {
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// A softmax row whose entries are all masked out.
struct DegenerateRowError : std::invalid_argument {
  explicit DegenerateRowError(const std::string& what) : std::invalid_argument(what) {}
};

// An API precondition was violated by the caller.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Malformed input data (files, edge lists, attribute lists).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Training diverged or produced non-finite values.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace overdilute
