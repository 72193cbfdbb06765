#include "mwi/array.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include <boost/math/special_functions/binomial.hpp>
#include <boost/math/special_functions/factorials.hpp>

#include "mwi/error.hpp"

namespace mwi {

namespace {

constexpr double kSqrt2Pi = 2.5066282746310002;
constexpr std::size_t kMaxPartials = 2000000;

bool close_relative(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

void require_matched(const FringePattern& p1, const FringePattern& p2) {
  validate(p1);
  validate(p2);
  if (!close_relative(p1.wavenumber, p2.wavenumber, 1e-12)) {
    std::ostringstream os;
    os << "wavenumbers differ: k1 = " << p1.wavenumber << ", k2 = " << p2.wavenumber;
    throw Error(ErrorKind::configuration, os.str());
  }
  if (!close_relative(p1.offset, p2.offset, 1e-12)) {
    std::ostringstream os;
    os << "offsets differ: a1 = " << p1.offset << ", a2 = " << p2.offset;
    throw Error(ErrorKind::configuration, os.str());
  }
}

}  // namespace

void validate_matched_wavenumbers(const ArraySpec& spec) {
  if (spec.devices.empty()) throw Error(ErrorKind::configuration, "array has no devices");
  if (!(spec.spacing > 0.0)) throw Error(ErrorKind::configuration, "array spacing must be positive");
  const double t0 = overlap_time(spec.devices[0]);
  const double k0 = pattern_at_overlap(spec.devices[0]).wavenumber;
  for (std::size_t n = 1; n < spec.devices.size(); ++n) {
    const double tn = overlap_time(spec.devices[n]);
    const double kn = pattern_at_overlap(spec.devices[n]).wavenumber;
    std::ostringstream os;
    if (!close_relative(t0, tn, 1e-12)) {
      os << "devices 0 and " << n << " overlap at different times (" << t0 << " vs " << tn << ")";
      throw Error(ErrorKind::configuration, os.str());
    }
    if (!close_relative(k0, kn, 1e-12)) {
      os << "devices 0 and " << n << " have unmatched wavenumbers (" << k0 << " vs " << kn << ")";
      throw Error(ErrorKind::configuration, os.str());
    }
  }
}

std::vector<double> difference_weights(int q) {
  if (q < 0) throw Error(ErrorKind::range, "difference order must be >= 0");
  std::vector<double> w(static_cast<std::size_t>(q) + 1);
  const double scale = std::ldexp(1.0, -q);
  for (int i = 0; i <= q; ++i) {
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    w[static_cast<std::size_t>(i)] = sign * boost::math::binomial_coefficient<double>(q, i) * scale;
  }
  return w;
}

DifferenceVariable make_difference_variable(int n, int q) {
  if (n < 0) throw Error(ErrorKind::range, "base index must be >= 0");
  return {n, q, difference_weights(q)};
}

double difference_variable(std::span<const double> positions, int n, int q) {
  if (n < 0 || q < 0 || static_cast<std::size_t>(n + q) >= positions.size()) {
    std::ostringstream os;
    os << "x_{" << n << "," << q << "} needs sites " << n << ".." << n + q << " but only " << positions.size()
       << " positions are given";
    throw Error(ErrorKind::range, os.str());
  }
  const auto w = difference_weights(q);
  double sum = 0.0;
  for (int i = 0; i <= q; ++i) sum += w[static_cast<std::size_t>(i)] * positions[static_cast<std::size_t>(n + i)];
  return sum;
}

double difference_variable_recursive(std::span<const double> positions, int n, int q) {
  if (n < 0 || q < 0 || static_cast<std::size_t>(n + q) >= positions.size()) {
    throw Error(ErrorKind::range, "difference variable index overflow");
  }
  std::vector<double> level(positions.begin() + n, positions.begin() + n + q + 1);
  for (int order = 1; order <= q; ++order) {
    for (int i = 0; i + order <= q; ++i) level[i] = 0.5 * (level[i] - level[i + 1]);
  }
  return level[0];
}

double residual_fluctuation(const DisplacementCoefficients& coeffs, double h, int q) {
  if (q < 0 || static_cast<std::size_t>(q) >= coeffs.values.size()) {
    throw Error(ErrorKind::range, "order exceeds the expansion order of the coefficients");
  }
  return boost::math::factorial<double>(static_cast<unsigned>(q)) * std::pow(h, q) *
         coeffs.values[static_cast<std::size_t>(q)] * std::ldexp(1.0, -q);
}

PairDifferenceDensity::PairDifferenceDensity(const FringePattern& first, const FringePattern& second) {
  require_matched(first, second);
  offset_ = first.offset;
  wavenumber_ = first.wavenumber;
  sigma1_sq_ = first.width * first.width;
  sigma2_sq_ = second.width * second.width;
  const double sp2 = 0.25 * (sigma1_sq_ + sigma2_sq_);
  sigma_plus_ = std::sqrt(sp2);
  const double k = wavenumber_;
  eta_ = std::exp(-k * k * sigma1_sq_ * sigma2_sq_ / (8.0 * sp2));
  center_ = 0.5 * (first.center - second.center);

  // Each cos(w y) term integrates to sqrt(2 pi) s+ exp(-w^2 s+^2 / 2).
  auto mass = [&](double w) { return std::exp(-0.5 * w * w * sp2); };
  const double a = offset_;
  const double e4 = eta_ * eta_ * eta_ * eta_;
  const double w1 = sigma1_sq_ * k / (2.0 * sp2);
  const double w2 = sigma2_sq_ * k / (2.0 * sp2);
  const double w3 = (sigma1_sq_ - sigma2_sq_) * k / (2.0 * sp2);
  normalization_ = kSqrt2Pi * sigma_plus_ *
                   (2.0 * a * a + mass(2.0 * k) + 2.0 * eta_ * a * (mass(w1) + mass(w2)) + e4 * mass(w3));
}

double PairDifferenceDensity::unnormalized(double x) const {
  const double y = x - center_;
  const double sp2 = sigma_plus_ * sigma_plus_;
  const double k = wavenumber_;
  const double a = offset_;
  const double e4 = eta_ * eta_ * eta_ * eta_;
  const double bracket = 2.0 * a * a + std::cos(2.0 * k * y) +
                         2.0 * eta_ * a *
                             (std::cos(sigma1_sq_ * k * y / (2.0 * sp2)) + std::cos(sigma2_sq_ * k * y / (2.0 * sp2))) +
                         e4 * std::cos((sigma1_sq_ - sigma2_sq_) * k * y / (2.0 * sp2));
  return std::exp(-y * y / (2.0 * sp2)) * bracket;
}

double PairDifferenceDensity::operator()(double x) const { return unnormalized(x) / normalization_; }

FringePattern PairDifferenceDensity::leading() const {
  return {2.0 * offset_ * offset_, sigma_plus_, 2.0 * wavenumber_, center_};
}

PairDifferenceDensity convolve_patterns(const FringePattern& first, const FringePattern& second) {
  return PairDifferenceDensity(first, second);
}

ReductionStep reduce_order(const FringePattern& first, const FringePattern& second, double eta_tolerance) {
  const PairDifferenceDensity full(first, second);
  if (full.eta() > eta_tolerance) throw TruncationError(full.eta(), eta_tolerance);
  return {full.leading(), full.eta()};
}

PatternRecursionState initial_recursion_state(const ArraySpec& spec) {
  validate_matched_wavenumbers(spec);
  PatternRecursionState state;
  state.order = 0;
  for (const auto& device : spec.devices) state.patterns.push_back(pattern_at_overlap(device));
  return state;
}

PatternRecursionState advance(const PatternRecursionState& state, double eta_tolerance) {
  if (state.patterns.size() < 2) {
    throw Error(ErrorKind::range, "not enough devices to raise the difference order");
  }
  PatternRecursionState next;
  next.order = state.order + 1;
  next.etas = state.etas;
  std::vector<double> etas;
  for (std::size_t n = 0; n + 1 < state.patterns.size(); ++n) {
    const ReductionStep step = reduce_order(state.patterns[n], state.patterns[n + 1], eta_tolerance);
    next.patterns.push_back(step.pattern);
    etas.push_back(step.eta);
  }
  next.etas.push_back(std::move(etas));
  return next;
}

PatternRecursionState recursive_state(const ArraySpec& spec, int q, double eta_tolerance) {
  if (q < 0) throw Error(ErrorKind::range, "order must be >= 0");
  if (spec.devices.size() < static_cast<std::size_t>(q) + 1) {
    std::ostringstream os;
    os << "order " << q << " needs " << q + 1 << " devices, array has " << spec.devices.size();
    throw Error(ErrorKind::range, os.str());
  }
  ArraySpec trimmed{{spec.devices.begin(), spec.devices.begin() + q + 1}, spec.spacing};
  PatternRecursionState state = initial_recursion_state(trimmed);
  while (state.order < q) state = advance(state, eta_tolerance);
  return state;
}

FringePattern recursive_pattern(const ArraySpec& spec, int q, double eta_tolerance) {
  return recursive_state(spec, q, eta_tolerance).patterns.front();
}

WeightedSumDensity::WeightedSumDensity(std::span<const FringePattern> patterns, std::span<const double> weights) {
  if (patterns.size() != weights.size() || patterns.empty()) {
    throw Error(ErrorKind::configuration, "weighted sum needs one weight per pattern");
  }
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    validate(patterns[i]);
    variance_ += patterns[i].width * patterns[i].width * weights[i] * weights[i];
    center_ += weights[i] * patterns[i].center;
  }
  if (!(variance_ > 0.0)) throw Error(ErrorKind::configuration, "all weights are zero");

  // Characteristic function of pattern i at w_i u is a weighted sum of
  // exp(-s_i^2 (w_i u - j k_i)^2 / 2) for j in {-1, 0, 1}. Expand the product
  // and invert each Gaussian term analytically.
  struct Partial {
    double b;       // sum s^2 w j k
    double c;       // sum s^2 j^2 k^2
    double weight;  // product of the pattern coefficients
  };
  std::vector<Partial> partials{{0.0, 0.0, 1.0}};
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    const auto& p = patterns[i];
    const double s2 = p.width * p.width;
    const double norm = p.offset + std::exp(-0.5 * s2 * p.wavenumber * p.wavenumber);
    std::vector<Partial> next;
    next.reserve(partials.size() * 3);
    for (const auto& part : partials) {
      for (int j = -1; j <= 1; ++j) {
        if (j != 0 && p.wavenumber == 0.0) {
          // cos(0) = 1 merges into the constant term.
          if (j == 1) next.push_back({part.b, part.c, part.weight * 1.0 / norm});
          continue;
        }
        const double coef = (j == 0 ? p.offset : 0.5) / norm;
        next.push_back({part.b + s2 * weights[i] * j * p.wavenumber, part.c + s2 * j * j * p.wavenumber * p.wavenumber,
                        part.weight * coef});
      }
    }
    // Equal patterns produce many coincident (b, c) pairs; merge them so the
    // expansion stays polynomial in the number of patterns.
    std::sort(next.begin(), next.end(), [](const Partial& l, const Partial& r) {
      return l.b != r.b ? l.b < r.b : l.c < r.c;
    });
    double scale = 0.0;
    for (const auto& part : next) scale = std::max({scale, std::abs(part.b), std::abs(part.c)});
    const double tol = 1e-13 * scale;
    partials.clear();
    for (const auto& part : next) {
      bool merged_into = false;
      for (auto it = partials.rbegin(); it != partials.rend() && part.b - it->b <= tol; ++it) {
        if (std::abs(part.c - it->c) <= tol) {
          it->weight += part.weight;
          merged_into = true;
          break;
        }
      }
      if (!merged_into) partials.push_back(part);
    }
    if (partials.size() > kMaxPartials) {
      std::ostringstream os;
      os << "weighted sum expands into more than " << kMaxPartials << " terms";
      throw Error(ErrorKind::capacity, os.str());
    }
  }

  // Term: weight exp(-(c - b^2/A)/2) exp(-(x-M)^2 / 2A) cos(b/A (x - M)) / sqrt(2 pi A).
  std::map<double, double> merged;
  for (const auto& part : partials) {
    const double amp = part.weight * std::exp(-0.5 * (part.c - part.b * part.b / variance_));
    const double w = std::abs(part.b / variance_);
    merged[w] += amp;
  }
  for (const auto& [w, amp] : merged) {
    if (!terms_.empty() && close_relative(terms_.back().wavenumber, w, 1e-9)) {
      terms_.back().amplitude += amp;
    } else {
      terms_.push_back({w, amp});
    }
  }
}

double WeightedSumDensity::operator()(double x) const {
  const double y = x - center_;
  double sum = 0.0;
  for (const auto& t : terms_) sum += t.amplitude * std::cos(t.wavenumber * y);
  return sum * std::exp(-0.5 * y * y / variance_) / std::sqrt(2.0 * std::numbers::pi * variance_);
}

double WeightedSumDensity::amplitude_at(double wavenumber) const {
  double sum = 0.0;
  for (const auto& t : terms_) {
    if (close_relative(t.wavenumber, wavenumber, 1e-9) || (wavenumber == 0.0 && t.wavenumber == 0.0)) {
      sum += t.amplitude;
    }
  }
  return sum;
}

double WeightedSumDensity::visibility_at(double wavenumber) const {
  return amplitude_at(wavenumber) / amplitude_at(0.0);
}

WeightedSumDensity WeightedSumDensity::smeared(double displacement_std, double shift) const {
  if (!(displacement_std >= 0.0) || !std::isfinite(shift)) {
    throw Error(ErrorKind::configuration, "smearing needs a finite shift and std >= 0");
  }
  // Gaussian(V) cos(k y) * Gaussian(s^2) = exp(-k^2 V s^2 / 2V') Gaussian(V') cos(k V / V' y).
  WeightedSumDensity out;
  const double s2 = displacement_std * displacement_std;
  out.variance_ = variance_ + s2;
  out.center_ = center_ + shift;
  out.terms_.reserve(terms_.size());
  for (const auto& t : terms_) {
    out.terms_.push_back({t.wavenumber * variance_ / out.variance_,
                          t.amplitude * std::exp(-0.5 * t.wavenumber * t.wavenumber * variance_ * s2 / out.variance_)});
  }
  return out;
}

}  // namespace mwi
