#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace icp {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed JSONL line. `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateIdError : public Error {
 public:
  explicit DuplicateIdError(const std::string& id)
      : Error("duplicate sample id '" + id + "'"), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InsufficientSamplesError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class StatisticsError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Network-level failure; the only error class that is retried.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The provider answered but rejected the request (or answered garbage).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Raised by batch scoring when some elements failed after retries.
class BatchError : public Error {
 public:
  BatchError(std::vector<std::size_t> failed, std::vector<std::string> messages);
  const std::vector<std::size_t>& failed_indices() const noexcept { return failed_; }
  const std::vector<std::string>& messages() const noexcept { return messages_; }

 private:
  std::vector<std::size_t> failed_;
  std::vector<std::string> messages_;
};

}  // namespace icp
