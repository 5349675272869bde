#pragma once

#include <stdexcept>
#include <string>

namespace pinalite {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed document or query text. The message names the offending path
/// or byte position.
class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RecordingError : public Error {
 public:
  using Error::Error;
};

class SynthesisError : public Error {
 public:
  using Error::Error;
};

class ExecutionError : public Error {
 public:
  using Error::Error;
};

/// The aggregation server could not be reached or answered with a
/// transport-level failure.
class ServerUnavailable : public Error {
 public:
  using Error::Error;
};

/// Request refused by the server (quota, block or malformed payload).
class ServerRejected : public Error {
 public:
  ServerRejected(int status, std::string message, long retry_after_s = 0)
      : Error(std::move(message)), status_(status), retry_after_s_(retry_after_s) {}

  int status() const noexcept { return status_; }
  long retry_after_s() const noexcept { return retry_after_s_; }

 private:
  int status_;
  long retry_after_s_;
};

/// Plaintext of a personal entry survived obfuscation.
class LeakError : public Error {
 public:
  using Error::Error;
};

}  // namespace pinalite
