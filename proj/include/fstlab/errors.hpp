#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fstlab {

// Every failure carries a stable, machine-readable code ("config.unknown_key",
// "idx.bad_magic", ...) so callers and the CLI can branch on it without
// parsing the message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Shape mismatch, incompatible layers, bad registry alignment.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data outside the documented domain.
class InputError : public Error {
 public:
  using Error::Error;
};

// Degenerate numerics (zero head norm and the like).
class NumericError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error("io.failure", path + ": " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Raised when a training loop produces a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch, const std::string& what)
      : Error("train.diverged", "epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace fstlab
