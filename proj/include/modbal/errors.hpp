#pragma once

#include <stdexcept>
#include <string>

namespace modbal {

// Error taxonomy used across the library. Each maps to one failure class of
// the public contracts; the CLI turns any of these into exit code 1.

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed input document (bad JSON, missing/ill-typed fields).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Well-formed document whose data violates a model invariant.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ReallocationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RoutingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric requested on inputs for which it is undefined (empty sets,
// all-zero confusion matrix).
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace modbal
