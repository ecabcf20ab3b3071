#pragma once

#include <stdexcept>
#include <string>

namespace gradfaith {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ContractError -> 1, InputError/ConfigError/ShapeError -> 2,
// FormatError and filesystem failures -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform (message names both shapes).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A model / dataset / run configuration is internally inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data is out of domain (bad label, duplicate seed, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// An API precondition was violated (dead tape, empty split, R < 2, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A serialized file is malformed; carries the byte offset when known.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg, long long offset = -1)
      : Error(offset >= 0 ? msg + " (byte offset " + std::to_string(offset) + ")" : msg),
        offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

// Training diverged (NaN loss); message carries epoch and batch index.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace gradfaith
