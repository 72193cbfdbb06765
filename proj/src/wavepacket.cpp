#include "mwi/wavepacket.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mwi/error.hpp"

namespace mwi {

namespace {
constexpr double kSqrt2Pi = 2.5066282746310002;  // sqrt(2 pi)
}

double GridDensity::integral() const {
  if (values.size() < 2) return 0.0;
  double sum = 0.5 * (values.front() + values.back());
  for (std::size_t i = 1; i + 1 < values.size(); ++i) sum += values[i];
  return sum * step;
}

void validate(const InterferometerSpec& spec) {
  if (!(spec.mass > 0.0) || !(spec.frequency > 0.0) || !(spec.hbar > 0.0)) {
    std::ostringstream os;
    os << "mass, frequency and hbar must be positive (mass=" << spec.mass
       << ", frequency=" << spec.frequency << ", hbar=" << spec.hbar << ")";
    throw Error(ErrorKind::invalid_spec, os.str());
  }
  if (spec.site < 0) throw Error(ErrorKind::invalid_spec, "site index must be >= 0");
}

Scales derive_scales(const InterferometerSpec& spec) {
  validate(spec);
  Scales s;
  s.x0 = std::sqrt(spec.hbar / (2.0 * spec.mass * spec.frequency));
  s.p0 = spec.hbar / (2.0 * s.x0);
  return s;
}

double overlap_time(const InterferometerSpec& spec) {
  validate(spec);
  if (spec.alpha.imag() == 0.0) {
    throw Error(ErrorKind::no_overlap_time,
                "overlap_time requires alpha_i != 0; the packets never overlap");
  }
  const double tk = -spec.alpha.real() / (spec.frequency * spec.alpha.imag());
  if (tk < 0.0) {
    std::ostringstream os;
    os << "overlap time t_k = " << tk << " is negative (alpha_r/alpha_i must be <= 0)";
    throw Error(ErrorKind::nonphysical_time, os.str());
  }
  return tk == 0.0 ? 0.0 : tk;  // drop a signed zero
}

InterferometerSpec spec_for_pattern(double wavenumber, double width, double mass, double frequency, double hbar) {
  InterferometerSpec spec;
  spec.mass = mass;
  spec.frequency = frequency;
  spec.hbar = hbar;
  const Scales s = derive_scales(spec);
  if (!(wavenumber > 0.0) || !(width >= s.x0) || !std::isfinite(wavenumber) || !std::isfinite(width)) {
    std::ostringstream os;
    os << "no spec yields k = " << wavenumber << " and sigma = " << width << " (need k > 0, sigma >= x0 = " << s.x0
       << ")";
    throw Error(ErrorKind::invalid_spec, os.str());
  }
  const double ai = 0.5 * wavenumber * s.x0;
  const double ratio = width / s.x0;
  const double wt = std::sqrt((ratio - 1.0) * (ratio + 1.0));
  spec.alpha = {-ai * wt, ai};
  return spec;
}

InterferometerSpec matched_spec(const InterferometerSpec& reference, double mass) {
  validate(reference);
  InterferometerSpec spec = reference;
  spec.mass = mass;
  validate(spec);
  spec.alpha = reference.alpha * std::sqrt(reference.mass / mass);
  return spec;
}

PacketGeometry packet_geometry(const InterferometerSpec& spec, double t, double displacement) {
  const Scales s = derive_scales(spec);
  if (!(t >= 0.0)) throw Error(ErrorKind::out_of_range, "packet_geometry requires t >= 0");
  const double ar = spec.alpha.real();
  const double ai = spec.alpha.imag();
  const double wt = spec.frequency * t;
  PacketGeometry g;
  g.center_plus = 2.0 * s.x0 * (ar + ai * wt);
  g.center_minus = -g.center_plus;
  g.width = s.x0 * std::sqrt(1.0 + wt * wt);
  g.wavenumber = (2.0 / s.x0) * (ai + wt / (1.0 + wt * wt) * (ar + ai * wt));
  g.displacement = displacement;
  return g;
}

PositionDensity::PositionDensity(const PacketGeometry& geometry) : geometry_(geometry) {
  const double s = geometry_.width;
  const double c = geometry_.center_plus;
  cross_weight_ = 2.0 * std::exp(-c * c / (2.0 * s * s));
  const double k = geometry_.wavenumber;
  normalization_ = kSqrt2Pi * s * (2.0 + cross_weight_ * std::exp(-0.5 * k * k * s * s));
}

double PositionDensity::operator()(double x) const {
  const double s2 = 2.0 * geometry_.width * geometry_.width;
  const double u = x - geometry_.displacement;
  const double up = u - geometry_.center_plus;
  const double um = u - geometry_.center_minus;
  const double value = std::exp(-up * up / s2) + std::exp(-um * um / s2) +
                       cross_weight_ * std::exp(-u * u / s2) * std::cos(geometry_.wavenumber * u);
  return value / normalization_;
}

PositionDensity position_pdf(const InterferometerSpec& spec, double t, double displacement) {
  return PositionDensity(packet_geometry(spec, t, displacement));
}

void validate(const FringePattern& p) {
  if (!(p.width > 0.0) || !(p.wavenumber >= 0.0) || !(p.offset >= 1.0) || !std::isfinite(p.center)) {
    std::ostringstream os;
    os << "fringe pattern needs sigma > 0, k >= 0, a >= 1 (a=" << p.offset << ", sigma=" << p.width
       << ", k=" << p.wavenumber << ")";
    throw Error(ErrorKind::invalid_spec, os.str());
  }
}

double FringePattern::unnormalized(double x) const {
  const double u = x - center;
  return std::exp(-u * u / (2.0 * width * width)) * (offset + std::cos(wavenumber * u));
}

double FringePattern::operator()(double x) const { return unnormalized(x) / pattern_normalization(*this); }

double FringePattern::period() const {
  return wavenumber > 0.0 ? 2.0 * std::numbers::pi / wavenumber : std::numeric_limits<double>::infinity();
}

double pattern_normalization(const FringePattern& p) {
  const double ks = p.wavenumber * p.width;
  return kSqrt2Pi * p.width * (p.offset + std::exp(-0.5 * ks * ks));
}

FringePattern pattern_at_overlap(const InterferometerSpec& spec, double displacement) {
  const double tk = overlap_time(spec);
  const Scales s = derive_scales(spec);
  const double wt = spec.frequency * tk;
  FringePattern p;
  p.offset = 1.0;
  p.width = s.x0 * std::sqrt(1.0 + wt * wt);
  p.wavenumber = std::abs(2.0 * spec.alpha.imag() / s.x0);
  p.center = displacement;
  return p;
}

double AveragedPattern::operator()(double x) const {
  const double u = x - center;
  return std::exp(-u * u / (2.0 * width * width)) * (offset + suppression * std::cos(wavenumber * u)) /
         normalization();
}

double AveragedPattern::normalization() const {
  const double ks = wavenumber * width;
  return kSqrt2Pi * width * (offset + suppression * std::exp(-0.5 * ks * ks));
}

AveragedPattern averaged_pdf(const FringePattern& pattern, double displacement_std) {
  validate(pattern);
  if (!(displacement_std >= 0.0)) {
    throw Error(ErrorKind::invalid_spec, "averaged_pdf requires sigma_gamma >= 0");
  }
  const double s2 = pattern.width * pattern.width;
  const double g2 = displacement_std * displacement_std;
  const double total = s2 + g2;
  const double k = pattern.wavenumber;
  AveragedPattern avg;
  avg.offset = pattern.offset;
  avg.suppression = std::exp(-k * k * s2 * g2 / (2.0 * total));
  avg.width = std::sqrt(total);
  avg.wavenumber = k * s2 / total;
  avg.center = pattern.center;
  return avg;
}

GridDensity sample_on_grid(const FringePattern& pattern, const GridResolution& resolution) {
  validate(pattern);
  const double half = resolution.half_width_sigmas * pattern.width;
  std::size_t points = resolution.min_points;
  if (pattern.wavenumber > 0.0) {
    const double periods = 2.0 * half / pattern.period();
    points = std::max(points, static_cast<std::size_t>(std::ceil(periods * resolution.points_per_period)) + 1);
  }
  return tabulate(pattern, pattern.center - half, pattern.center + half, points);
}

}  // namespace mwi
