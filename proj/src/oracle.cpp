#include "mwi/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>

#include <fftw3.h>

#include "mwi/error.hpp"

namespace mwi {

namespace {

using cplx = std::complex<double>;

// The FFTW planner is not reentrant; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class FftPlan {
 public:
  FftPlan(std::vector<cplx>& buffer, int sign) {
    std::lock_guard lock(planner_mutex());
    auto* data = reinterpret_cast<fftw_complex*>(buffer.data());
    plan_ = fftw_plan_dft_1d(static_cast<int>(buffer.size()), data, data, sign, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  void execute() const { fftw_execute(plan_); }

 private:
  fftw_plan plan_;
};

}  // namespace

double GridState::norm() const {
  double sum = 0.0;
  for (const auto& a : amplitudes) sum += std::norm(a);
  return sum * spacing;
}

double GridState::centroid() const {
  double sum = 0.0, mass = 0.0;
  for (std::size_t j = 0; j < amplitudes.size(); ++j) {
    const double p = std::norm(amplitudes[j]);
    sum += p * x(j);
    mass += p;
  }
  return sum / mass;
}

GridDensity GridState::probability() const {
  GridDensity d;
  d.origin = x(0);
  d.step = spacing;
  d.values.resize(amplitudes.size());
  for (std::size_t j = 0; j < amplitudes.size(); ++j) d.values[j] = std::norm(amplitudes[j]);
  return d;
}

double GridState::edge_mass(double edge_fraction) const {
  const auto edge = static_cast<std::size_t>(edge_fraction * static_cast<double>(amplitudes.size()));
  double sum = 0.0;
  for (std::size_t j = 0; j < edge; ++j) {
    sum += std::norm(amplitudes[j]) + std::norm(amplitudes[amplitudes.size() - 1 - j]);
  }
  return sum * spacing;
}

GridState prepare_cat(const InterferometerSpec& spec, const GridParameters& grid) {
  const Scales s = derive_scales(spec);
  if (grid.points < 16 || grid.points % 2 != 0 || !(grid.spacing > 0.0)) {
    throw Error(ErrorKind::resolution, "grid needs an even number (>= 16) of points and positive spacing");
  }
  const double ar = spec.alpha.real();
  const double ai = spec.alpha.imag();
  const double mean_x = 2.0 * s.x0 * ar;
  const double mean_p = 2.0 * s.p0 * ai;

  const double half_span = 0.5 * static_cast<double>(grid.points) * grid.spacing;
  const double needed_span = std::abs(mean_x) + 8.0 * s.x0;
  double max_spacing = s.x0 / 8.0;
  if (ai != 0.0) max_spacing = std::min(max_spacing, std::numbers::pi * s.x0 / std::abs(ai) / 10.0);
  const double nyquist = std::numbers::pi / grid.spacing;
  const double needed_wavenumber = (std::abs(mean_p) + 8.0 * s.p0) / spec.hbar;
  if (half_span < needed_span || grid.spacing > max_spacing * (1.0 + 1e-12) || nyquist < needed_wavenumber) {
    std::ostringstream os;
    os << "grid of " << grid.points << " points at spacing " << grid.spacing << " cannot hold the cat state "
       << "(needs half span >= " << needed_span << ", spacing <= " << max_spacing << ", Nyquist >= "
       << needed_wavenumber << ")";
    throw Error(ErrorKind::resolution, os.str());
  }

  GridState state;
  state.spacing = grid.spacing;
  state.mass = spec.mass;
  state.hbar = spec.hbar;
  state.amplitudes.resize(grid.points);
  const double prefactor = std::pow(2.0 * std::numbers::pi * s.x0 * s.x0, -0.25);
  const double n_alpha = std::sqrt(2.0 + 2.0 * std::exp(-2.0 * std::norm(spec.alpha)));
  auto coherent = [&](double x, double cx, double cp) {
    const double u = x - cx;
    return prefactor * std::exp(cplx(-u * u / (4.0 * s.x0 * s.x0), cp / spec.hbar * (x - 0.5 * cx)));
  };
  for (std::size_t j = 0; j < grid.points; ++j) {
    const double x = state.x(j);
    state.amplitudes[j] = (coherent(x, mean_x, mean_p) + coherent(x, -mean_x, -mean_p)) / n_alpha;
  }
  return state;
}

int minimum_split_steps(const GridState& state, double duration) {
  const double kmax = std::numbers::pi / state.spacing;
  const double rate = state.hbar * kmax * kmax / (2.0 * state.mass);
  return std::max(1, static_cast<int>(std::floor(duration * rate / (0.25 * std::numbers::pi))) + 1);
}

GridState evolve_split_step(GridState state, const NoisePath& path, double t, int steps) {
  if (state.amplitudes.empty()) throw Error(ErrorKind::resolution, "empty grid state");
  if (steps < 1 || !(t >= state.time)) throw Error(ErrorKind::step_size, "need steps >= 1 and t >= current time");
  if (t > path.duration() * (1.0 + 1e-12) || path.values.empty()) {
    throw Error(ErrorKind::out_of_range, "evolution time lies beyond the noise path");
  }
  const std::size_t n = state.size();
  const double dt = (t - state.time) / steps;
  const double kmax = std::numbers::pi / state.spacing;
  const double kinetic_phase = state.hbar * kmax * kmax * dt / (2.0 * state.mass);
  if (kinetic_phase >= 0.25 * std::numbers::pi) {
    std::ostringstream os;
    os << "kinetic phase per step " << kinetic_phase << " at Nyquist exceeds pi/4; use at least "
       << minimum_split_steps(state, t - state.time) << " steps";
    throw Error(ErrorKind::step_size, os.str());
  }

  std::vector<cplx> drift(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double idx = j < n / 2 ? static_cast<double>(j) : static_cast<double>(j) - static_cast<double>(n);
    const double kappa = 2.0 * std::numbers::pi * idx / (static_cast<double>(n) * state.spacing);
    drift[j] = std::polar(1.0 / static_cast<double>(n), -state.hbar * kappa * kappa * dt / (2.0 * state.mass));
  }

  auto& psi = state.amplitudes;
  const FftPlan forward(psi, FFTW_FORWARD);
  const FftPlan backward(psi, FFTW_BACKWARD);
  auto kick = [&](double g, double tau) {
    const double rate = -state.mass * g * tau / state.hbar;
    for (std::size_t j = 0; j < n; ++j) psi[j] *= std::polar(1.0, rate * state.x(j));
  };

  const double norm0 = state.norm();
  const double t0 = state.time;
  for (int step = 0; step < steps; ++step) {
    const double ta = t0 + step * dt;
    const double tb = t0 + (step + 1) * dt;
    kick(path.at(0, ta), 0.5 * dt);
    forward.execute();
    for (std::size_t j = 0; j < n; ++j) psi[j] *= drift[j];
    backward.execute();
    kick(path.at(0, tb), 0.5 * dt);
    if ((step + 1) % 256 == 0 || step + 1 == steps) {
      const double drift_norm = std::abs(state.norm() - norm0);
      if (drift_norm > 1e-6) {
        std::ostringstream os;
        os << "norm drifted by " << drift_norm << " after " << step + 1 << " steps";
        throw Error(ErrorKind::step_size, os.str());
      }
    }
  }
  state.time = t;
  const double edge = state.edge_mass(0.1);
  if (edge > 1e-12) {
    std::ostringstream os;
    os << "probability " << edge << " reached the outer 10% of the periodic grid";
    throw Error(ErrorKind::boundary, os.str());
  }
  return state;
}

MagnusResult magnus_quantities(const NoisePath& path, const InterferometerSpec& spec, double t) {
  const Scales sc = derive_scales(spec);
  if (path.times.empty() || !(t >= 0.0) || t > path.duration() * (1.0 + 1e-12)) {
    throw Error(ErrorKind::out_of_range, "magnus time lies outside the path");
  }
  const auto& s = path.times;
  const auto& g = path.values.at(0);
  auto integrand = [&](double time, double accel) { return accel * cplx(1.0, spec.frequency * time); };
  cplx sum = 0.0;
  std::size_t i = 0;
  for (; i + 1 < s.size() && s[i + 1] <= t; ++i) {
    sum += 0.5 * (s[i + 1] - s[i]) * (integrand(s[i], g[i]) + integrand(s[i + 1], g[i + 1]));
  }
  if (i + 1 < s.size() && s[i] < t) sum += 0.5 * (t - s[i]) * (integrand(s[i], g[i]) + integrand(t, path.at(0, t)));

  MagnusResult r;
  r.gamma = cplx(0.0, -spec.mass * sc.x0 / spec.hbar) * sum;
  r.phase = (r.gamma * std::conj(spec.alpha)).imag();
  return r;
}

DistributionDistance compare_distributions(const GridDensity& first, const GridDensity& second) {
  if (first.size() != second.size() || first.size() < 2 ||
      std::abs(first.step - second.step) > 1e-12 * std::abs(first.step) ||
      std::abs(first.origin - second.origin) > 1e-9 * std::abs(first.step)) {
    throw Error(ErrorKind::alignment, "distributions are not sampled on a common grid");
  }
  DistributionDistance d;
  double cdf1 = 0.0, cdf2 = 0.0;
  for (std::size_t i = 0; i < first.size(); ++i) {
    const double diff = std::abs(first.values[i] - second.values[i]);
    const double w = (i == 0 || i + 1 == first.size()) ? 0.5 : 1.0;
    d.l1 += w * diff * first.step;
    d.linf = std::max(d.linf, diff);
    if (i > 0) {
      cdf1 += 0.5 * first.step * (first.values[i - 1] + first.values[i]);
      cdf2 += 0.5 * first.step * (second.values[i - 1] + second.values[i]);
      d.ks = std::max(d.ks, std::abs(cdf1 - cdf2));
    }
  }
  return d;
}

}  // namespace mwi
