#pragma once

#include <complex>

#include "mwi/density.hpp"

// Closed-form single-interferometer physics for a cat state
// (|alpha> + |-alpha>)/N of a free particle subject to a uniform acceleration g(t).
//
// Units: hbar defaults to 1 and lengths are in whatever unit mass and
// frequency imply. With mass = 1/2 and frequency = 1 the length unit is x0.

namespace mwi {

struct InterferometerSpec {
  double mass = 0.5;
  double frequency = 1.0;
  std::complex<double> alpha{0.0, 0.0};
  int site = 0;
  double hbar = 1.0;
};

struct Scales {
  double x0 = 0.0;  // position spread sqrt(hbar / (2 m omega))
  double p0 = 0.0;  // momentum spread hbar / (2 x0)
};

// Throws ErrorKind::invalid_spec for non-positive mass, frequency or hbar.
void validate(const InterferometerSpec& spec);

Scales derive_scales(const InterferometerSpec& spec);

// t_k = -alpha_r / (omega alpha_i), the instant both packet centers reach 0.
double overlap_time(const InterferometerSpec& spec);

struct PacketGeometry {
  double center_plus = 0.0;   // x_{+alpha}(t), excluding the noise displacement
  double center_minus = 0.0;  // x_{-alpha}(t)
  double width = 0.0;         // sigma_t
  double wavenumber = 0.0;    // k_t
  double displacement = 0.0;  // x_gamma(t)
};

PacketGeometry packet_geometry(const InterferometerSpec& spec, double t, double displacement = 0.0);

// Normalized position density of the evolved cat state, translated by the
// stochastic displacement x_gamma.
class PositionDensity {
 public:
  explicit PositionDensity(const PacketGeometry& geometry);

  double operator()(double x) const;
  const PacketGeometry& geometry() const { return geometry_; }
  double normalization() const { return normalization_; }

 private:
  PacketGeometry geometry_;
  double cross_weight_;
  double normalization_;
};

PositionDensity position_pdf(const InterferometerSpec& spec, double t, double displacement = 0.0);

// Gaussian-enveloped fringe family
//   P(x) = exp(-(x-mu)^2 / 2 sigma^2) [a + cos(k (x-mu))] / N.
struct FringePattern {
  double offset = 1.0;      // a >= 1
  double width = 1.0;       // sigma > 0
  double wavenumber = 0.0;  // k >= 0
  double center = 0.0;      // mu

  double unnormalized(double x) const;
  double operator()(double x) const;
  double visibility() const { return 1.0 / offset; }
  double period() const;
};

void validate(const FringePattern& pattern);

// N = sqrt(2 pi) sigma (a + exp(-sigma^2 k^2 / 2)).
double pattern_normalization(const FringePattern& pattern);

// The spec whose overlap pattern has wavenumber k and envelope width sigma:
// alpha_i = k x0 / 2 and omega t_k = sqrt(sigma^2 / x0^2 - 1). Throws
// ErrorKind::invalid_spec unless k > 0 and sigma >= x0.
InterferometerSpec spec_for_pattern(double wavenumber, double width, double mass = 0.5, double frequency = 1.0,
                                    double hbar = 1.0);

// A device of another mass with the same overlap time and at-overlap wavenumber
// as the reference: alpha scales as sqrt(m_ref / m).
InterferometerSpec matched_spec(const InterferometerSpec& reference, double mass);

// The overlap-time cos^2 pattern, stored as a = 1, k = 2 alpha_i / x0,
// sigma = sigma_{t_k}.
FringePattern pattern_at_overlap(const InterferometerSpec& spec, double displacement = 0.0);

// Fringe pattern averaged over a Gaussian displacement x_gamma ~ N(0, s^2):
//   exp(-(x-mu)^2 / 2 S^2) [a + c cos(k' (x-mu))] / N,
// with S^2 = sigma^2 + s^2, c = exp(-k^2 sigma^2 s^2 / 2 S^2), k' = k sigma^2 / S^2.
struct AveragedPattern {
  double offset = 1.0;
  double suppression = 1.0;  // c
  double width = 1.0;        // S
  double wavenumber = 0.0;   // k'
  double center = 0.0;

  double operator()(double x) const;
  double normalization() const;
  double visibility() const { return suppression / offset; }
};

AveragedPattern averaged_pdf(const FringePattern& pattern, double displacement_std);

// Grid covering center +- half_width_sigmas envelope widths with at least
// points_per_period samples per fringe period (and never fewer than min_points).
struct GridResolution {
  double half_width_sigmas = 8.0;
  double points_per_period = 32.0;
  std::size_t min_points = 1025;
};

GridDensity sample_on_grid(const FringePattern& pattern, const GridResolution& resolution = {});

}  // namespace mwi
