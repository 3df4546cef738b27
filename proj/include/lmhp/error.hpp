#ifndef LMHP_ERROR_HPP
#define LMHP_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lmhp {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition (bad shape, bad index, bad config).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A likelihood or gradient evaluated to a non-finite value, or an intensity
/// underflowed to zero.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `line()` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Corrupt, truncated or incompatible binary checkpoint.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Simulation parameters that would produce an explosive process.
class UnstableConfiguration : public Error {
 public:
  using Error::Error;
};

}  // namespace lmhp

#endif  // LMHP_ERROR_HPP
