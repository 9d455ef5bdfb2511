#pragma once

#include <stdexcept>
#include <string>

namespace cgm {

// Input that cannot be processed as given (bad shapes, malformed graphs,
// corrupt files). The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

enum class GraphErrorKind {
  Cycle,
  MissingParent,
  MultipleSinks,
  LatentMismatch,
  Disconnected,
  DuplicateId,
  UnknownVariable,
};

class GraphError : public ValidationError {
 public:
  GraphError(GraphErrorKind kind, const std::string& what)
      : ValidationError(what), kind_(kind) {}
  GraphErrorKind kind() const noexcept { return kind_; }

 private:
  GraphErrorKind kind_;
};

enum class FormatErrorKind {
  Magic,
  Version,
  Checksum,
  Shape,
  Resolution,
  Syntax,
};

class FormatError : public ValidationError {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : ValidationError(what), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

// Runtime failure of the environment (files, streams). Exit code 1.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cgm
