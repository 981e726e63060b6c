#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ctiq {

/// Tensor extents do not match what an operation requires. `axis()` names the
/// offending axis of the offending operand.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(std::string op, std::size_t axis, std::size_t expected, std::size_t actual,
                 const std::string& detail = {});
  DimensionError(std::string op, const std::string& message);

  const std::string& op() const noexcept { return op_; }
  std::size_t axis() const noexcept { return axis_; }

 private:
  std::string op_;
  std::size_t axis_ = 0;
};

/// Argument outside a function's mathematical domain (e.g. quantile at p = 1).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Smoothing parameters that cannot produce a certificate for the given sample count.
class CertificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt, truncated or mismatched binary container.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-facing configuration. `field()` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Correlation requested for a vector with zero variance.
class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace ctiq
