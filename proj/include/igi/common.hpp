#pragma once

#include <stdexcept>
#include <string>

namespace igi {

// Raised when inputs violate an operation's preconditions (shape, range, dimension).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a training stage or evaluation needs an artifact that is not present.
class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace igi
