#pragma once

#include <stdexcept>
#include <string>

namespace soco {

// Invalid arguments or contract violations detected at call boundaries.
class InvalidInputError : public std::runtime_error {
 public:
  explicit InvalidInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf surfaced by an op, or a degenerate numeric condition (zero norm).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed serialized data (checkpoints, caches, configs).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_input(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInputError(msg);
}

}  // namespace soco
