#pragma once

#include <stdexcept>
#include <string>

namespace bsnn {

// Caller passed something the operation's precondition forbids.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A matrix that must be inverted is singular or too ill-conditioned.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input lies in an excluded, measure-zero region (e.g. rotation with eigenvalue -1).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Closed form requested for a dimension where none exists.
class UnsupportedDimension : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad configuration values (splits, SBM parameters, run configs).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input files. The message carries the field path or byte offset.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training or sampling produced a non-finite value or could not proceed.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bsnn
