#include "mwi/montecarlo.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Dense>
#include <unsupported/Eigen/LevenbergMarquardt>

#include "mwi/error.hpp"

namespace mwi {

InverseCdfSampler::InverseCdfSampler(GridDensity density) : density_(std::move(density)) {
  if (density_.size() < 2 || !(density_.step > 0.0)) {
    throw Error(ErrorKind::sampling, "density grid needs at least two points and a positive step");
  }
  cumulative_.resize(density_.size());
  cumulative_[0] = 0.0;
  for (std::size_t i = 0; i < density_.size(); ++i) {
    const double f = density_.values[i];
    if (!std::isfinite(f) || f < 0.0) {
      std::ostringstream os;
      os << "density value " << f << " at x = " << density_.x(i) << " is not a finite non-negative number";
      throw Error(ErrorKind::sampling, os.str());
    }
    if (i > 0) cumulative_[i] = cumulative_[i - 1] + 0.5 * density_.step * (density_.values[i - 1] + f);
  }
  if (!(cumulative_.back() > 0.0)) throw Error(ErrorKind::sampling, "density has zero mass on its grid");
}

double InverseCdfSampler::operator()(double u) const {
  const double target = u * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
  std::size_t i = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  i = std::min(i, cumulative_.size() - 2);
  const double r = target - cumulative_[i];
  const double f0 = density_.values[i];
  const double slope = (density_.values[i + 1] - f0) / density_.step;
  // Solve f0 s + slope s^2 / 2 = r for s in [0, step].
  const double disc = std::max(0.0, f0 * f0 + 2.0 * slope * r);
  const double denom = f0 + std::sqrt(disc);
  double s = denom > 0.0 ? 2.0 * r / denom : 0.0;
  s = std::clamp(s, 0.0, density_.step);
  return density_.x(i) + s;
}

double InverseCdfSampler::cdf(double x) const {
  if (x <= density_.origin) return 0.0;
  if (x >= density_.back()) return 1.0;
  const auto i = std::min(static_cast<std::size_t>((x - density_.origin) / density_.step), density_.size() - 2);
  const double s = x - density_.x(i);
  const double f0 = density_.values[i];
  const double slope = (density_.values[i + 1] - f0) / density_.step;
  return (cumulative_[i] + f0 * s + 0.5 * slope * s * s) / cumulative_.back();
}

double sample_from_pdf(const InverseCdfSampler& sampler, CounterStream& stream) { return sampler(stream.uniform()); }

std::vector<double> Histogram::edges() const {
  std::vector<double> e(counts.size() + 1);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = edge(i);
  return e;
}

std::vector<double> Histogram::centers() const {
  std::vector<double> c(counts.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = center(i);
  return c;
}

std::vector<double> Histogram::density() const {
  std::vector<double> d(counts.size(), 0.0);
  if (total == 0) return d;
  const double scale = 1.0 / (static_cast<double>(total) * width());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(counts[i]) * scale;
  return d;
}

void Histogram::add(double value) {
  const double pos = (value - lo) / width();
  if (pos >= 0.0 && pos < static_cast<double>(counts.size())) {
    ++counts[std::min(static_cast<std::size_t>(pos), counts.size() - 1)];
    ++total;
  } else if (value == hi) {
    ++counts.back();
    ++total;
  } else {
    ++outside;
  }
}

void Histogram::merge(const Histogram& other) {
  if (other.counts.size() != counts.size() || other.lo != lo || other.hi != hi) {
    throw Error(ErrorKind::alignment, "cannot merge histograms with different bins");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  total += other.total;
  outside += other.outside;
}

Histogram make_histogram(std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw Error(ErrorKind::configuration, "histogram needs bins > 0 and hi > lo");
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(bins, 0);
  return h;
}

Histogram build_histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
  if (values.empty()) throw Error(ErrorKind::empty_data, "no values to histogram");
  Histogram h = make_histogram(bins, lo, hi);
  for (double v : values) h.add(v);
  return h;
}

HistogramAgreement compare_histogram(const Histogram& histogram, const std::function<double(double)>& density) {
  if (histogram.total == 0) throw Error(ErrorKind::empty_data, "cannot compare an empty histogram");
  // Composite Simpson rule with 16 panels per bin.
  constexpr int panels = 16;
  std::vector<double> mass(histogram.bins());
  double in_range = 0.0;
  for (std::size_t i = 0; i < histogram.bins(); ++i) {
    const double a = histogram.edge(i);
    const double step = histogram.width() / panels;
    double sum = density(a) + density(a + histogram.width());
    for (int j = 1; j < panels; ++j) sum += (j % 2 == 1 ? 4.0 : 2.0) * density(a + j * step);
    mass[i] = sum * step / 3.0;
    in_range += mass[i];
  }

  HistogramAgreement out;
  const auto total = static_cast<double>(histogram.total);
  double chi2 = 0.0, observed_cdf = 0.0, expected_cdf = 0.0;
  for (std::size_t i = 0; i < histogram.bins(); ++i) {
    const double expected = total * mass[i];
    if (expected >= 20.0) {
      const double d = static_cast<double>(histogram.counts[i]) - expected;
      chi2 += d * d / expected;
      ++out.bins_used;
    }
    observed_cdf += static_cast<double>(histogram.counts[i]) / total;
    expected_cdf += in_range > 0.0 ? mass[i] / in_range : 0.0;
    out.ks = std::max(out.ks, std::abs(observed_cdf - expected_cdf));
  }
  out.chi2_per_bin = out.bins_used > 0 ? chi2 / out.bins_used : 0.0;
  return out;
}

HistogramLayout fringe_layout(double center, double width, double wavenumber, double half_width_sigmas,
                              double bins_per_period) {
  if (!(width > 0.0) || !(half_width_sigmas > 0.0)) {
    throw Error(ErrorKind::configuration, "histogram layout needs a positive width");
  }
  if (bins_per_period < 8.0) {
    throw Error(ErrorKind::configuration, "histograms need at least 8 bins per fringe period");
  }
  HistogramLayout layout;
  layout.lo = center - half_width_sigmas * width;
  layout.hi = center + half_width_sigmas * width;
  const double periods = wavenumber > 0.0 ? (layout.hi - layout.lo) * wavenumber / (2.0 * std::numbers::pi) : 1.0;
  layout.bins = std::max<std::size_t>(64, static_cast<std::size_t>(std::ceil(periods * bins_per_period)));
  return layout;
}

namespace {

// Residuals of A exp(-z^2/2)[1 + v cos(k (x - mu) + phi)] - y, z = (x - mu)/sigma.
// Parameters: [A, mu, sigma, v, k, phi].
struct FringeResidual : Eigen::DenseFunctor<double> {
  const Eigen::VectorXd& x;
  const Eigen::VectorXd& y;

  FringeResidual(const Eigen::VectorXd& xs, const Eigen::VectorXd& ys)
      : Eigen::DenseFunctor<double>(6, static_cast<int>(xs.size())), x(xs), y(ys) {}

  int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double u = x[i] - p[1];
      const double z = u / p[2];
      r[i] = p[0] * std::exp(-0.5 * z * z) * (1.0 + p[3] * std::cos(p[4] * u + p[5])) - y[i];
    }
    return 0;
  }

  int df(const Eigen::VectorXd& p, Eigen::MatrixXd& jac) const {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double u = x[i] - p[1];
      const double z = u / p[2];
      const double e = std::exp(-0.5 * z * z);
      const double c = std::cos(p[4] * u + p[5]);
      const double s = std::sin(p[4] * u + p[5]);
      const double b = 1.0 + p[3] * c;
      jac(i, 0) = e * b;
      jac(i, 1) = p[0] * e * (z / p[2] * b + p[3] * p[4] * s);
      jac(i, 2) = p[0] * e * z * z / p[2] * b;
      jac(i, 3) = p[0] * e * c;
      jac(i, 4) = -p[0] * e * p[3] * s * u;
      jac(i, 5) = -p[0] * e * p[3] * s;
    }
    return 0;
  }
};

}  // namespace

FringeFit fit_fringe(const Histogram& histogram, double k_hint) {
  if (histogram.total == 0) throw Error(ErrorKind::empty_data, "cannot fit an empty histogram");
  if (!(k_hint > 0.0)) throw Error(ErrorKind::configuration, "fit needs a positive wavenumber hint");
  const double span = histogram.hi - histogram.lo;
  if (span * k_hint / (2.0 * std::numbers::pi) < 3.0) {
    throw Error(ErrorKind::configuration, "histogram must cover at least 3 fringe periods of the hint");
  }

  const auto density = histogram.density();
  const auto n = static_cast<Eigen::Index>(density.size());
  double mean = 0.0, second = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const double w = density[i] * histogram.width();
    mean += w * histogram.center(i);
    second += w * histogram.center(i) * histogram.center(i);
  }
  const double scale = std::sqrt(std::max(second - mean * mean, histogram.width() * histogram.width()));

  // Work in standardized coordinates so all parameters are of order one.
  Eigen::VectorXd xs(n), ys(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    xs[i] = (histogram.center(static_cast<std::size_t>(i)) - mean) / scale;
    ys[i] = density[static_cast<std::size_t>(i)] * scale;
  }
  const double k0 = k_hint * scale;

  // Linear start: y ~ c0 G + c1 G cos(k x) + c2 G sin(k x) with G the moment Gaussian.
  Eigen::MatrixXd basis(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = std::exp(-0.5 * xs[i] * xs[i]);
    basis(i, 0) = g;
    basis(i, 1) = g * std::cos(k0 * xs[i]);
    basis(i, 2) = g * std::sin(k0 * xs[i]);
  }
  const Eigen::Vector3d beta = basis.colPivHouseholderQr().solve(ys);
  Eigen::VectorXd p(6);
  p << beta[0], 0.0, 1.0, std::hypot(beta[1], beta[2]) / std::max(beta[0], 1e-300), k0,
      std::atan2(-beta[2], beta[1]);

  FringeResidual functor(xs, ys);
  Eigen::LevenbergMarquardt<FringeResidual> lm(functor);
  lm.setMaxfev(2000);
  lm.setXtol(1e-12);
  lm.setFtol(1e-14);
  const auto status = lm.minimize(p);
  if (status == Eigen::LevenbergMarquardtSpace::ImproperInputParameters ||
      status == Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation || !p.allFinite() || p[2] == 0.0) {
    std::ostringstream os;
    os << "fringe fit did not converge (status " << static_cast<int>(status) << ", " << lm.iterations()
       << " iterations, k_hint " << k_hint << ", params " << p.transpose() << ")";
    throw Error(ErrorKind::fit, os.str());
  }

  double v = p[3];
  double k = p[4];
  double phase = p[5];
  if (k < 0.0) {
    k = -k;
    phase = -phase;
  }
  if (v < 0.0) {
    v = -v;
    phase += std::numbers::pi;
  }
  phase = std::remainder(phase, 2.0 * std::numbers::pi);

  Eigen::VectorXd residual(n);
  functor(p, residual);

  FringeFit fit;
  fit.visibility = std::min(v, 1.0);
  fit.wavenumber = k / scale;
  fit.width = std::abs(p[2]) * scale;
  fit.center = mean + p[1] * scale;
  fit.phase = phase;
  fit.amplitude = p[0] / scale;
  fit.residual_norm = residual.norm() / std::sqrt(static_cast<double>(n)) / scale;
  fit.iterations = static_cast<int>(lm.iterations());
  return fit;
}

std::vector<Leaf> construction_leaves(Construction construction, int q) {
  if (q < 0) throw Error(ErrorKind::range, "order must be >= 0");
  std::vector<Leaf> leaves;
  if (construction == Construction::shared_sites) {
    const auto w = difference_weights(q);
    for (int i = 0; i <= q; ++i) leaves.push_back({i, w[static_cast<std::size_t>(i)]});
    return leaves;
  }
  if (q > 16) throw Error(ErrorKind::capacity, "independent tree construction is limited to q <= 16");
  const double scale = std::ldexp(1.0, -q);
  for (unsigned b = 0; b < (1u << q); ++b) {
    const int site = std::popcount(b);
    leaves.push_back({site, (site % 2 == 0 ? 1.0 : -1.0) * scale});
  }
  std::stable_sort(leaves.begin(), leaves.end(), [](const Leaf& a, const Leaf& b) { return a.site < b.site; });
  return leaves;
}

WeightedSumDensity difference_density(const ArraySpec& spec, int q, Construction construction) {
  validate_matched_wavenumbers(spec);
  if (spec.devices.size() < static_cast<std::size_t>(q) + 1) {
    throw Error(ErrorKind::range, "array too small for the requested order");
  }
  std::vector<FringePattern> patterns;
  std::vector<double> weights;
  for (const auto& leaf : construction_leaves(construction, q)) {
    patterns.push_back(pattern_at_overlap(spec.devices[static_cast<std::size_t>(leaf.site)]));
    weights.push_back(leaf.weight);
  }
  return WeightedSumDensity(patterns, weights);
}

namespace {

bool constant_only(const NoiseModel& model) {
  return std::all_of(model.orders.begin(), model.orders.end(), [](const ProcessSpec& p) {
    return std::holds_alternative<ZeroProcess>(p) || std::holds_alternative<ShotConstantProcess>(p);
  });
}

struct Worker {
  Histogram difference;
  std::vector<Histogram> sites;
};

}  // namespace

ExperimentResult run_experiment(const ArraySpec& spec, const NoiseModel& model, const ExperimentOptions& options) {
  validate_matched_wavenumbers(spec);
  validate(model);
  const int q = options.order;
  if (q < 0) throw Error(ErrorKind::range, "order must be >= 0");
  if (spec.devices.size() < static_cast<std::size_t>(q) + 1) {
    std::ostringstream os;
    os << "order " << q << " needs " << q + 1 << " sites, array has " << spec.devices.size();
    throw Error(ErrorKind::range, os.str());
  }
  if (options.shots == 0) throw Error(ErrorKind::configuration, "shots must be >= 1");
  if (options.path_step < 0.0) throw Error(ErrorKind::configuration, "path step must be >= 0");

  ExperimentResult result;
  result.overlap_time = overlap_time(spec.devices[0]);
  result.leaves = construction_leaves(options.construction, q);
  const double tk = result.overlap_time;
  const double h = spec.spacing;

  std::vector<InverseCdfSampler> samplers;
  const GridResolution resolution{8.0, options.points_per_period, 2049};
  for (int n = 0; n <= q; ++n) {
    result.site_patterns.push_back(pattern_at_overlap(spec.devices[static_cast<std::size_t>(n)]));
    samplers.emplace_back(sample_on_grid(result.site_patterns.back(), resolution));
  }

  const double k = result.site_patterns[0].wavenumber;
  double variance = 0.0;
  for (const auto& leaf : result.leaves) {
    const double s = result.site_patterns[static_cast<std::size_t>(leaf.site)].width;
    variance += leaf.weight * leaf.weight * s * s;
  }
  result.difference_width = std::sqrt(variance);
  result.difference_wavenumber = std::ldexp(k, q);

  const auto diff_layout = fringe_layout(0.0, result.difference_width, result.difference_wavenumber,
                                         options.half_width_sigmas, options.bins_per_period);
  std::vector<HistogramLayout> site_layouts;
  for (const auto& p : result.site_patterns) {
    site_layouts.push_back(fringe_layout(p.center, p.width, p.wavenumber, options.half_width_sigmas,
                                         options.bins_per_period));
  }

  // The first leaf at each site also feeds that site's histogram.
  std::vector<int> site_leaf(static_cast<std::size_t>(q) + 1, -1);
  for (std::size_t j = 0; j < result.leaves.size(); ++j) {
    auto& slot = site_leaf[static_cast<std::size_t>(result.leaves[j].site)];
    if (slot < 0) slot = static_cast<int>(j);
  }

  const bool fast_noise = constant_only(model);
  std::vector<double> grid;
  if (!fast_noise && tk > 0.0) grid = time_grid(tk, options.path_step > 0.0 ? options.path_step : tk);

  if (options.keep_samples) result.samples.assign(options.shots, 0.0);

  auto run_range = [&](std::uint64_t begin, std::uint64_t end, Worker& worker) {
    worker.difference = make_histogram(diff_layout.bins, diff_layout.lo, diff_layout.hi);
    for (const auto& layout : site_layouts) worker.sites.push_back(make_histogram(layout.bins, layout.lo, layout.hi));
    std::vector<double> site_shift(static_cast<std::size_t>(q) + 1);
    DisplacementCoefficients coeffs;
    for (std::uint64_t shot = begin; shot < end; ++shot) {
      CounterStream stream(options.seed, shot);
      coeffs.values.assign(model.orders.size(), 0.0);
      if (tk > 0.0 && !model.orders.empty()) {
        if (fast_noise) {
          for (std::size_t o = 0; o < model.orders.size(); ++o) {
            if (const auto* c = std::get_if<ShotConstantProcess>(&model.orders[o])) {
              double g = c->mean;
              if (c->std > 0.0) g = std::normal_distribution<double>(c->mean, c->std)(stream);
              coeffs.values[o] = -0.5 * g * tk * tk;
            }
          }
        } else {
          coeffs = displacement_coefficients(sample_path(model, grid, stream), tk);
        }
      }
      for (int n = 0; n <= q; ++n) {
        double shift = displacement_at_site(coeffs, n, h);
        double power = 1.0;
        for (double c : options.injected_polynomial) {
          shift += c * power;
          power *= n;
        }
        site_shift[static_cast<std::size_t>(n)] = shift;
      }
      double value = 0.0;
      for (std::size_t j = 0; j < result.leaves.size(); ++j) {
        const auto site = static_cast<std::size_t>(result.leaves[j].site);
        const double x = samplers[site](stream.uniform()) + site_shift[site];
        value += result.leaves[j].weight * x;
        if (site_leaf[site] == static_cast<int>(j)) worker.sites[site].add(x);
      }
      worker.difference.add(value);
      if (options.keep_samples) result.samples[shot] = value;
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(options.shots)));
  std::vector<Worker> workers(threads);
  if (threads == 1) {
    run_range(0, options.shots, workers[0]);
  } else {
    std::vector<std::exception_ptr> failures(threads);
    {
      std::vector<std::jthread> pool;
      const std::uint64_t chunk = (options.shots + threads - 1) / threads;
      for (unsigned w = 0; w < threads; ++w) {
        const std::uint64_t begin = std::min<std::uint64_t>(options.shots, w * chunk);
        const std::uint64_t end = std::min<std::uint64_t>(options.shots, begin + chunk);
        pool.emplace_back([&, begin, end, w] {
          try {
            run_range(begin, end, workers[w]);
          } catch (...) {
            failures[w] = std::current_exception();
          }
        });
      }
    }
    for (const auto& failure : failures) {
      if (failure) std::rethrow_exception(failure);
    }
  }

  result.difference = workers[0].difference;
  result.sites = workers[0].sites;
  for (unsigned w = 1; w < threads; ++w) {
    result.difference.merge(workers[w].difference);
    for (std::size_t s = 0; s < result.sites.size(); ++s) result.sites[s].merge(workers[w].sites[s]);
  }
  return result;
}

}  // namespace mwi
