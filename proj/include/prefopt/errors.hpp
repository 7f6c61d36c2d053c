#pragma once

#include <stdexcept>
#include <string>

namespace prefopt {

// Bad or inconsistent configuration (objective/model/training options).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files: broken JSON lines, missing fields, bad checkpoints.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset-level problems: underfull directions, unknown language codes.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Token sequences that do not fit the model context.
class LengthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace prefopt
