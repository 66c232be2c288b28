#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lm2d {

// Error categories line up with the CLI exit codes and the C API status codes.
enum class ErrorKind : int {
  Usage = 1,
  Data = 2,
  Numeric = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// Two 6D columns that are parallel or zero cannot be orthonormalized.
class DegenerateRotationError : public NumericError {
 public:
  explicit DegenerateRotationError(const std::string& what) : NumericError(what) {}
};

// Malformed binary input; carries the byte offset where parsing failed.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace lm2d
