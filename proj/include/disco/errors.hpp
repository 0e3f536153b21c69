#pragma once

#include <stdexcept>
#include <string>

namespace disco {

// Argument outside the documented domain (bad token, unknown question, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Enumeration or allocation budget exceeded.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Inconsistent configuration (missing reference policy, bad objective name).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Group with p_hat in {0,1}: no contrast, no normalized advantage.
class DegenerateGroupError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Every group of a batch was skipped.
class EmptyBatchError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace disco
