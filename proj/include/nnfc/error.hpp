#pragma once

#include <stdexcept>
#include <string>

namespace nnfc {

// Exit codes used by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFormat = 3;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Violated operation precondition (empty key set, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return kExitUsage; }
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return kExitUsage; }
};

// Artifact files with a bad magic, version or truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return kExitFormat; }
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace nnfc
