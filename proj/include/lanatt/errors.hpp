#pragma once

#include <stdexcept>
#include <string>

namespace lanatt {

/// Operand shapes do not conform to an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input lies outside an operation's domain (empty lane set, non-scalar loss, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed dataset, checkpoint or config file.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::string field = {})
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) +
                                          (field.empty() ? "" : ", field '" + field + "'") + ": " + what
                                    : what),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

}  // namespace lanatt
