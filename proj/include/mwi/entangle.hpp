#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

// Entanglement between the A and B interferometers of one or more devices,
// each restricted to its two arms {L, R}.
//
// Basis ordering: qubits are device-major with A before B inside a device,
// the first qubit being the most significant bit of the basis index. L = 0 and
// R = 1. For d devices the qubit order is A0 B0 A1 B1 ... and the A side is
// selected by a_side_mask(d).

namespace mwi {

inline constexpr int kMaxDevices = 8;

using SparseDensity = Eigen::SparseMatrix<std::complex<double>>;

std::uint32_t a_side_mask(int devices);
// The A-side bits of a basis index packed into a d-bit integer, device 0 first.
std::uint32_t a_configuration(std::uint32_t index, int devices);

class ArmState {
 public:
  static ArmState pure(int devices, Eigen::VectorXcd amplitudes);
  static ArmState mixed(int devices, SparseDensity rho);

  int devices() const { return devices_; }
  std::size_t dimension() const { return std::size_t{1} << (2 * devices_); }
  bool is_pure() const { return pure_; }
  const Eigen::VectorXcd& amplitudes() const { return amplitudes_; }
  // The density matrix; built from the amplitudes for pure states.
  SparseDensity density() const;

 private:
  ArmState(int devices, bool pure) : devices_(devices), pure_(pure) {}

  int devices_ = 0;
  bool pure_ = true;
  Eigen::VectorXcd amplitudes_;
  SparseDensity rho_;
};

// (|L>_A|L>_B + exp(i[phi + (j-1) dphi]) |R>_A|R>_B) / sqrt(2), j >= 1.
ArmState device_state(int j, double phi, double dphi);

ArmState tensor_combine(std::span<const ArmState> states);

// Hermitian, unit trace, eigenvalues >= -1e-12. Throws ErrorKind::invalid_state.
void validate_density(const ArmState& state);

// <psi| rho |psi> for a pure reference state.
double fidelity(const ArmState& state, const ArmState& reference);

struct PhaseDistribution {
  enum class Kind { uniform, gaussian, point };

  Kind kind = Kind::uniform;
  double sigma = 0.0;  // gaussian only
  double value = 0.0;  // gaussian mean or point location

  static PhaseDistribution uniform() { return {Kind::uniform, 0.0, 0.0}; }
  static PhaseDistribution gaussian(double sigma, double mean = 0.0) { return {Kind::gaussian, sigma, mean}; }
  static PhaseDistribution point(double phi) { return {Kind::point, 0.0, phi}; }

  // E[exp(i m theta)].
  std::complex<double> characteristic(int m) const;
};

// A pure-state family whose basis amplitudes carry phases
// exp(i sum_v multipliers[v] theta_v) over a set of phase variables theta.
struct PhaseFamily {
  struct Term {
    std::uint32_t index = 0;
    std::complex<double> coefficient;
    std::vector<int> multipliers;
  };

  int devices = 0;
  int variables = 0;
  std::vector<Term> terms;

  ArmState at(std::span<const double> phases) const;
};

// Product of device_state(j, phi, dphi) for j = 1..copies; variables (phi, dphi).
PhaseFamily gradient_family(int copies);
// Product of devices each with its own phase phi_j; one variable per device.
PhaseFamily independent_family(int copies);

// Exact average: coherences are scaled by the characteristic functions.
ArmState average_over_phases(const PhaseFamily& family, std::span<const PhaseDistribution> distributions);

struct PhaseQuadrature {
  int uniform_points = 64;    // periodic trapezoid, exact for |m| < points
  int gaussian_points = 257;  // trapezoid over mean +- 12 sigma
};

// Averages an arbitrary family by tensor-product quadrature.
ArmState average_over_phases(const std::function<ArmState(std::span<const double>)>& family, int devices,
                             std::span<const PhaseDistribution> distributions, const PhaseQuadrature& rule = {});

// log2 || rho^{T_A} ||_1 with the partial transpose taken over the A side.
// Validates the state first.
double log_negativity(const ArmState& state);

struct MeasurementOutcome {
  int outcome = 0;
  double probability = 0.0;
  ArmState post_state = ArmState::pure(1, Eigen::VectorXcd::Zero(4));
};

// Projective measurement of the A side, grouping A configurations by classifier.
// Outcomes with zero probability are omitted; results are ordered by outcome.
std::vector<MeasurementOutcome> measure_a_side(const ArmState& state,
                                               const std::function<int(std::uint32_t)>& classifier);

// O_A = |LL><LL| + 2 (|LR><LR| + |RL><RL|) + 3 |RR><RR| on a two-device state.
std::vector<MeasurementOutcome> local_measurement(const ArmState& state);

// sum_outcomes p E_N(post-state).
double average_post_measurement_entanglement(const std::vector<MeasurementOutcome>& outcomes);

// E_N of the gradient family with copies in {1, 2, 4}, averaged over (phi, dphi).
double recovered_entanglement(int copies, const PhaseDistribution& phi, const PhaseDistribution& dphi);

// Entanglement recovered by local A-side measurements on the averaged state:
// nothing for one copy, O_A for two copies, and for four copies O_A on each
// pair followed by O_A on the pair-level qubits when both pairs give outcome 2.
double measured_entanglement(int copies, const PhaseDistribution& phi, const PhaseDistribution& dphi);

}  // namespace mwi
