#pragma once

#include <stdexcept>
#include <string>

namespace sfm {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (STFT, net spec, engine, run config).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor / frame shape mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced by a solver stage or a streamed frame.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int index) : Error(what), index_(index) {}
  // Step, stage or frame index at which the value was detected.
  int index() const noexcept { return index_; }

 private:
  int index_;
};

// An external command (e.g. the codec) failed.
class ExternalToolError : public Error {
 public:
  ExternalToolError(const std::string& what, int exit_status) : Error(what), exit_status_(exit_status) {}
  int exit_status() const noexcept { return exit_status_; }

 private:
  int exit_status_;
};

// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data (WAV, weight container, tableau text).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace sfm
