#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dfacto {

/// Malformed text input. Carries the 1-based line number where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// An index fell outside its valid range.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Input contained no entries.
class EmptyInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A kernel refused to run because it would exceed its memory cap.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The solver produced a non-finite objective.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A channel closed or a socket call failed.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A peer sent a malformed, unexpected or stale message.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dfacto
