#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "mwi/density.hpp"
#include "mwi/noisefield.hpp"
#include "mwi/wavepacket.hpp"

// Direct grid evolution of H = p^2/2m + m g(t) x, used to check the closed
// forms independently of their derivation.

namespace mwi {

inline constexpr std::size_t kReferenceGridPoints = std::size_t{1} << 14;

struct GridParameters {
  std::size_t points = kReferenceGridPoints;
  double spacing = 0.125;  // x_j = (j - points/2) * spacing
};

struct GridState {
  double spacing = 0.0;
  double time = 0.0;
  double mass = 1.0;
  double hbar = 1.0;
  std::vector<std::complex<double>> amplitudes;

  std::size_t size() const { return amplitudes.size(); }
  double x(std::size_t j) const {
    return (static_cast<double>(j) - 0.5 * static_cast<double>(amplitudes.size())) * spacing;
  }
  double norm() const;
  double centroid() const;
  GridDensity probability() const;
  // Probability mass within the outer edge_fraction of the grid on either side.
  double edge_mass(double edge_fraction = 0.1) const;
};

// (|alpha> + |-alpha>) / N_alpha with N_alpha^2 = 2 + 2 exp(-2|alpha|^2).
// Throws ErrorKind::resolution if the grid is too small or too coarse.
GridState prepare_cat(const InterferometerSpec& spec, const GridParameters& grid);

// Symmetric split step: half kick with g(t_n), exact kinetic drift in Fourier
// space, half kick with g(t_n + dt). Uses the order-0 component of the path.
GridState evolve_split_step(GridState state, const NoisePath& path, double t, int steps);

// Fewest steps that keep the kinetic phase at the grid Nyquist below pi/4.
int minimum_split_steps(const GridState& state, double duration);

struct MagnusResult {
  std::complex<double> gamma;  // phase-space displacement amplitude
  double phase = 0.0;          // Im{gamma conj(alpha)}
};

// gamma_t = -(i m x0 / hbar) int_0^t g(s)(1 + i omega s) ds by trapezoidal quadrature.
MagnusResult magnus_quantities(const NoisePath& path, const InterferometerSpec& spec, double t);

struct DistributionDistance {
  double l1 = 0.0;
  double linf = 0.0;
  double ks = 0.0;
};

// Throws ErrorKind::alignment if the grids differ.
DistributionDistance compare_distributions(const GridDensity& first, const GridDensity& second);

}  // namespace mwi
