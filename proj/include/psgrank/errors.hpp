#pragma once

#include <stdexcept>
#include <string>

namespace psgrank {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IntegrityError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };
class UsageError : public Error { using Error::Error; };
class EncodingError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

}  // namespace psgrank
