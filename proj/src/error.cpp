#include "mwi/error.hpp"

#include <sstream>

namespace mwi {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_spec: return "invalid-spec";
    case ErrorKind::no_overlap_time: return "no-overlap-time";
    case ErrorKind::nonphysical_time: return "nonphysical-time";
    case ErrorKind::invalid_grid: return "invalid-grid";
    case ErrorKind::out_of_range: return "out-of-range";
    case ErrorKind::singular_geometry: return "singular-geometry";
    case ErrorKind::bracket: return "bracket";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::range: return "range";
    case ErrorKind::truncation: return "truncation-invalid";
    case ErrorKind::capacity: return "capacity";
    case ErrorKind::invalid_state: return "invalid-state";
    case ErrorKind::sampling: return "sampling";
    case ErrorKind::empty_data: return "empty-data";
    case ErrorKind::fit: return "fit";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::step_size: return "step-size";
    case ErrorKind::boundary: return "boundary";
    case ErrorKind::alignment: return "alignment";
  }
  return "unknown";
}

bool is_numerical(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::truncation:
    case ErrorKind::invalid_state:
    case ErrorKind::sampling:
    case ErrorKind::fit:
    case ErrorKind::step_size:
    case ErrorKind::boundary:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

namespace {
std::string truncation_message(double eta, double tolerance) {
  std::ostringstream os;
  os << "discarded overlap factor eta = " << eta << " exceeds tolerance " << tolerance;
  return os.str();
}
}  // namespace

TruncationError::TruncationError(double eta, double tolerance)
    : Error(ErrorKind::truncation, truncation_message(eta, tolerance)), eta_(eta) {}

}  // namespace mwi
