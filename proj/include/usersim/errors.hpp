#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace usersim {

// Violated data invariant. `line` is 1-based when the value came from a file,
// 0 otherwise; `field` names the offending field when known.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(const std::string& what, std::string field = {}, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        field_(std::move(field)),
        line_(line) {}

  const std::string& field() const { return field_; }
  std::size_t line() const { return line_; }

 private:
  std::string field_;
  std::size_t line_;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& what, std::size_t written = 0)
      : std::runtime_error(what), written_(written) {}
  std::size_t written() const { return written_; }

 private:
  std::size_t written_;
};

// A fixture file the experiment depends on is missing.
class MissingFixture : public IoError {
 public:
  using IoError::IoError;
};

// Optimization produced a non-finite loss; `index` names the batch or pair.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

}  // namespace usersim
