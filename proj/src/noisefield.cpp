#include "mwi/noisefield.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/binomial.hpp>
#include <boost/math/tools/roots.hpp>

#include "mwi/error.hpp"

namespace mwi {

namespace {

struct ProcessValidator {
  void operator()(const ZeroProcess&) const {}
  void operator()(const ShotConstantProcess& p) const {
    if (!(p.std >= 0.0) || !std::isfinite(p.mean)) bad("shot-constant process needs std >= 0");
  }
  void operator()(const OrnsteinUhlenbeckProcess& p) const {
    if (!(p.std >= 0.0) || !(p.relaxation_time > 0.0)) bad("OU process needs std >= 0 and tau > 0");
  }
  void operator()(const BandLimitedWhiteProcess& p) const {
    if (!(p.std >= 0.0) || !(p.correlation_step > 0.0)) {
      bad("band-limited process needs std >= 0 and correlation step > 0");
    }
  }
  [[noreturn]] static void bad(const char* what) { throw Error(ErrorKind::invalid_spec, what); }
};

struct ProcessSampler {
  const std::vector<double>& times;
  CounterStream& stream;

  std::vector<double> operator()(const ZeroProcess&) const { return std::vector<double>(times.size(), 0.0); }

  std::vector<double> operator()(const ShotConstantProcess& p) const {
    std::normal_distribution<double> normal(p.mean, p.std);
    return std::vector<double>(times.size(), p.std > 0.0 ? normal(stream) : p.mean);
  }

  std::vector<double> operator()(const OrnsteinUhlenbeckProcess& p) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out(times.size());
    out[0] = p.std * normal(stream);
    for (std::size_t i = 1; i < times.size(); ++i) {
      const double decay = std::exp(-(times[i] - times[i - 1]) / p.relaxation_time);
      out[i] = out[i - 1] * decay + p.std * std::sqrt(1.0 - decay * decay) * normal(stream);
    }
    return out;
  }

  std::vector<double> operator()(const BandLimitedWhiteProcess& p) const {
    std::normal_distribution<double> normal(0.0, p.std);
    std::vector<double> out(times.size());
    long window = -1;
    double value = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      const long w = static_cast<long>(std::floor(times[i] / p.correlation_step));
      while (window < w) {
        value = p.std > 0.0 ? normal(stream) : 0.0;
        ++window;
      }
      out[i] = value;
    }
    return out;
  }
};

}  // namespace

void validate(const NoiseModel& model) {
  for (const auto& process : model.orders) std::visit(ProcessValidator{}, process);
}

double NoisePath::at(int order, double t) const {
  const auto& g = values.at(static_cast<std::size_t>(order));
  if (t <= times.front()) return g.front();
  if (t >= times.back()) return g.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
  const double w = (t - times[i]) / (times[i + 1] - times[i]);
  return g[i] + w * (g[i + 1] - g[i]);
}

std::vector<double> time_grid(double duration, double step) {
  if (!(duration > 0.0) || !(step > 0.0)) {
    throw Error(ErrorKind::invalid_grid, "duration and step must be positive");
  }
  if (step > duration) {
    std::ostringstream os;
    os << "step " << step << " exceeds duration " << duration;
    throw Error(ErrorKind::invalid_grid, os.str());
  }
  const auto intervals = static_cast<std::size_t>(std::ceil(duration / step * (1.0 - 1e-12)));
  std::vector<double> times(intervals + 1);
  for (std::size_t i = 0; i < intervals; ++i) times[i] = static_cast<double>(i) * step;
  times[intervals] = duration;
  return times;
}

NoisePath sample_path(const NoiseModel& model, const std::vector<double>& times, CounterStream& stream) {
  validate(model);
  NoisePath path;
  path.times = times;
  path.values.reserve(model.orders.size());
  for (const auto& process : model.orders) path.values.push_back(std::visit(ProcessSampler{times, stream}, process));
  return path;
}

NoisePath sample_path(const NoiseModel& model, double duration, double step, std::uint64_t seed) {
  CounterStream stream(seed, 0);
  NoisePath path = sample_path(model, time_grid(duration, step), stream);
  path.seed = seed;
  return path;
}

double displacement_mean(const ProcessSpec& process, double t) {
  if (const auto* p = std::get_if<ShotConstantProcess>(&process)) return -0.5 * p->mean * t * t;
  return 0.0;
}

double displacement_variance(const ProcessSpec& process, double t) {
  std::visit(ProcessValidator{}, process);
  if (!(t >= 0.0)) throw Error(ErrorKind::out_of_range, "displacement variance needs t >= 0");
  if (const auto* p = std::get_if<ShotConstantProcess>(&process)) return 0.25 * p->std * p->std * t * t * t * t;
  if (const auto* p = std::get_if<OrnsteinUhlenbeckProcess>(&process)) {
    // Lags u = t - s; the kernel has a kink on the diagonal, so split there.
    using boost::math::quadrature::gauss_kronrod;
    const double tau = p->relaxation_time;
    auto inner = [&](double v) {
      auto f = [&](double u) { return u * std::exp(-std::abs(u - v) / tau); };
      return gauss_kronrod<double, 31>::integrate(f, 0.0, v, 10, 1e-12) +
             gauss_kronrod<double, 31>::integrate(f, v, t, 10, 1e-12);
    };
    const double i = gauss_kronrod<double, 61>::integrate([&](double v) { return v * inner(v); }, 0.0, t, 10, 1e-11);
    return p->std * p->std * i;
  }
  if (const auto* p = std::get_if<BandLimitedWhiteProcess>(&process)) {
    double sum = 0.0;
    for (double a = 0.0; a < t; a += p->correlation_step) {
      const double b = std::min(t, a + p->correlation_step);
      // int_a^b (s - t) ds
      const double w = 0.5 * ((b - t) * (b - t) - (a - t) * (a - t));
      sum += w * w;
    }
    return p->std * p->std * sum;
  }
  return 0.0;
}

DisplacementCoefficients displacement_coefficients(const NoisePath& path, double t) {
  if (path.times.empty()) throw Error(ErrorKind::out_of_range, "empty noise path");
  if (!(t >= 0.0) || t > path.duration() * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "t = " << t << " lies outside the path grid [0, " << path.duration() << "]";
    throw Error(ErrorKind::out_of_range, os.str());
  }
  DisplacementCoefficients out;
  out.values.reserve(path.values.size());
  const auto& s = path.times;
  for (std::size_t k = 0; k < path.values.size(); ++k) {
    const auto& g = path.values[k];
    double sum = 0.0;
    std::size_t i = 0;
    for (; i + 1 < s.size() && s[i + 1] <= t; ++i) {
      const double h = s[i + 1] - s[i];
      sum += 0.5 * h * (g[i] * (s[i] - t) + g[i + 1] * (s[i + 1] - t));
    }
    if (i + 1 < s.size() && s[i] < t) {
      // The integrand vanishes at s = t, so only the left end contributes.
      sum += 0.5 * (t - s[i]) * g[i] * (s[i] - t);
    }
    out.values.push_back(sum);
  }
  return out;
}

double displacement_at_site(const DisplacementCoefficients& coeffs, int n, double h) {
  const double r = static_cast<double>(n) * h;
  double value = 0.0;
  for (auto it = coeffs.values.rbegin(); it != coeffs.values.rend(); ++it) value = value * r + *it;
  return value;
}

double newtonian_acceleration(const PointMassSource& src) {
  if (!(src.mass > 0.0) || !(src.distance > 0.0)) {
    throw Error(ErrorKind::invalid_spec, "point mass needs M > 0 and R > 0");
  }
  return PointMassSource::G * src.mass / (src.distance * src.distance);
}

double finite_difference_sensitivity(const PointMassSource& src, double h, int q) {
  newtonian_acceleration(src);
  if (q < 0 || !(h > 0.0)) throw Error(ErrorKind::invalid_spec, "sensitivity needs q >= 0 and h > 0");
  if (static_cast<double>(q) * h >= src.distance) {
    std::ostringstream os;
    os << "site " << q << " at " << q * h << " m lies at or beyond the source at R = " << src.distance;
    throw Error(ErrorKind::singular_geometry, os.str());
  }
  double sum = 0.0;
  for (int i = 0; i <= q; ++i) {
    const double r = src.distance - i * h;
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    sum += sign * boost::math::binomial_coefficient<double>(q, i) * PointMassSource::G * src.mass / (r * r);
  }
  return std::abs(sum);
}

double solve_standoff_distance(double mass, double h, int q, double delta_a) {
  if (!(delta_a > 0.0)) throw Error(ErrorKind::invalid_spec, "delta_a must be positive");
  if (!(mass > 0.0) || !(h > 0.0) || q < 0) throw Error(ErrorKind::invalid_spec, "need M > 0, h > 0, q >= 0");
  // Search in log R; the sensitivity decreases strictly with R beyond the last site.
  const double lo = std::log(q * h + 1e-6 * h);
  const double hi = std::log(1e15);
  auto excess = [&](double log_r) {
    return std::log(finite_difference_sensitivity({mass, std::exp(log_r)}, h, q)) - std::log(delta_a);
  };
  if (!(excess(lo) >= 0.0) || !(excess(hi) <= 0.0)) {
    std::ostringstream os;
    os << "no standoff distance in [" << std::exp(lo) << ", " << std::exp(hi) << "] m gives delta_a = " << delta_a;
    throw Error(ErrorKind::bracket, os.str());
  }
  auto tolerance = [](double a, double b) { return std::abs(b - a) <= 1e-12; };
  const auto [a, b] = boost::math::tools::bisect(excess, lo, hi, tolerance);
  return std::exp(0.5 * (a + b));
}

}  // namespace mwi
