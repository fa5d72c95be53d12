#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dedmpc {

/// Rejected configuration value. `field` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Caller violated an input contract (shape mismatch, non-finite input).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Explicit time stepping produced NaN or overflow.
class NumericalDivergence : public std::runtime_error {
 public:
  NumericalDivergence(std::size_t step, const std::string& message)
      : std::runtime_error("step " + std::to_string(step) + ": " + message), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Not enough support points around the laser to fit an interpolant.
class InsufficientSupport : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interpolation system singular (coincident or degenerate support points).
class DegenerateGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, corrupt or already-present artifact.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TuningFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dedmpc
