#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace affectgen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file (lexicon, sweep spec, checkpoint). Line is 1-based, 0
// when the error is not tied to a line.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& message)
      : Error(source + (line ? ":" + std::to_string(line) : std::string()) +
              ": " + message),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const { return source_; }
  std::size_t line() const { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

// A user-facing parameter failed validation. field() names the offending
// parameter so the CLI and the service can report it.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

// A loss term or its gradient became NaN/inf. term() is the loss term name
// ("kld", "topic", "affect", "gradient").
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(std::string term)
      : Error("non-finite value in " + term), term_(std::move(term)) {}

  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace affectgen
