#pragma once

#include <stdexcept>
#include <string>

namespace mwi {

enum class ErrorKind {
  invalid_spec,
  no_overlap_time,
  nonphysical_time,
  invalid_grid,
  out_of_range,
  singular_geometry,
  bracket,
  configuration,
  range,
  truncation,
  capacity,
  invalid_state,
  sampling,
  empty_data,
  fit,
  resolution,
  step_size,
  boundary,
  alignment,
};

const char* to_string(ErrorKind kind);

// True for violations of a numerical contract (as opposed to a bad input or
// configuration). The CLI maps these to exit code 3.
bool is_numerical(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Thrown by reduce_order when the discarded overlap factor is too large.
class TruncationError : public Error {
 public:
  TruncationError(double eta, double tolerance);

  double eta() const noexcept { return eta_; }

 private:
  double eta_;
};

}  // namespace mwi
