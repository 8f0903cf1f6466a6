#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>

namespace craf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Malformed input file (corpus JSONL, config JSON, checkpoint).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structurally valid input that violates a declared schema or invariant.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value produced during a numeric computation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure talking to a remote embedding provider. Callers may retry.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using WarningHandler = std::function<void(const std::string&)>;

/// Emits a non-fatal diagnostic. Default handler writes to stderr.
void warn(const std::string& message);

/// Replaces the warning sink; returns the previous one.
WarningHandler set_warning_handler(WarningHandler handler);

}  // namespace craf
