#pragma once

#include <stdexcept>
#include <string>

namespace w2sd {

/// Invalid configuration or mismatched shapes between collaborating objects.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message),
        field_(std::move(field)) {}
  explicit ConfigError(const std::string& message) : ConfigError("", message) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// API misuse, e.g. backward() on a cache that no forward pass filled.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A loss, gradient or parameter became NaN/Inf. The message carries the
/// iteration and loss name so the run log identifies where training blew up.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(long iteration, std::string loss_name, const std::string& detail)
      : std::runtime_error("non-finite value at iteration " + std::to_string(iteration) +
                           " in '" + loss_name + "': " + detail),
        iteration_(iteration),
        loss_name_(std::move(loss_name)) {}

  long iteration() const { return iteration_; }
  const std::string& loss_name() const { return loss_name_; }

 private:
  long iteration_;
  std::string loss_name_;
};

}  // namespace w2sd
