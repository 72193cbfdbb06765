#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "mwi/rng.hpp"

// Stochastic acceleration fields expanded around the first site,
//   g(x, t) = g0(t) + g1(t) x + g2(t) x^2 + ...,
// and the displacement functionals x_gamma^(k)(t) = int_0^t g_k(s) (s - t) ds.

namespace mwi {

struct ZeroProcess {};

// One Gaussian draw per shot, held constant over the whole run.
struct ShotConstantProcess {
  double mean = 0.0;
  double std = 0.0;
};

// Stationary Ornstein-Uhlenbeck process with autocorrelation std^2 exp(-|dt|/tau).
struct OrnsteinUhlenbeckProcess {
  double relaxation_time = 1.0;
  double std = 0.0;
};

// Independent N(0, std^2) values held over consecutive windows of length
// correlation_step.
struct BandLimitedWhiteProcess {
  double std = 0.0;
  double correlation_step = 1.0;
};

using ProcessSpec = std::variant<ZeroProcess, ShotConstantProcess, OrnsteinUhlenbeckProcess, BandLimitedWhiteProcess>;

struct NoiseModel {
  std::vector<ProcessSpec> orders;  // orders[k] drives g_k(t)

  int expansion_order() const { return static_cast<int>(orders.size()) - 1; }
};

void validate(const NoiseModel& model);

struct NoisePath {
  std::vector<double> times;                // strictly increasing, times[0] == 0
  std::vector<std::vector<double>> values;  // values[k][i] = g_k(times[i])
  std::uint64_t seed = 0;

  double duration() const { return times.back(); }
  int expansion_order() const { return static_cast<int>(values.size()) - 1; }
  // Linear interpolation of g_k between grid points.
  double at(int order, double t) const;
};

// Grid 0, step, 2 step, ..., ending exactly at duration.
std::vector<double> time_grid(double duration, double step);

NoisePath sample_path(const NoiseModel& model, double duration, double step, std::uint64_t seed);
NoisePath sample_path(const NoiseModel& model, const std::vector<double>& times, CounterStream& stream);

struct DisplacementCoefficients {
  std::vector<double> values;  // values[k] = x_gamma^(k)(t)
};

// Trapezoidal quadrature of int_0^t g_k(s) (s - t) ds on the path grid.
DisplacementCoefficients displacement_coefficients(const NoisePath& path, double t);

// Mean and variance of int_0^t g(s) (s - t) ds for the continuous process.
// Band-limited windows start at s = 0.
double displacement_mean(const ProcessSpec& process, double t);
double displacement_variance(const ProcessSpec& process, double t);

// x_gamma^(0) + (nh) x_gamma^(1) + (nh)^2 x_gamma^(2) + ...
double displacement_at_site(const DisplacementCoefficients& coeffs, int n, double h);

// On-axis point mass at distance R from the first site, SI units.
struct PointMassSource {
  static constexpr double G = 6.674e-11;

  double mass = 1.0;
  double distance = 1.0;
};

double newtonian_acceleration(const PointMassSource& src);

// |sum_i (-1)^i C(q,i) g(i h)| for the exact field g(x) = G M / (R - x)^2 at
// sites x = 0, h, ..., q h. No 1/2^q weight is applied.
double finite_difference_sensitivity(const PointMassSource& src, double h, int q);

// Distance R at which finite_difference_sensitivity equals delta_a.
double solve_standoff_distance(double mass, double h, int q, double delta_a);

}  // namespace mwi
