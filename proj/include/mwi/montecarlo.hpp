#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mwi/array.hpp"
#include "mwi/density.hpp"
#include "mwi/noisefield.hpp"
#include "mwi/rng.hpp"

// Shot-by-shot reconstruction: draw a noise realization, draw one position per
// device from its displaced density, histogram the difference variable and fit
// the fringe visibility.

namespace mwi {

// Inverse-CDF sampler over a tabulated density. The density is taken as
// piecewise linear between grid points, so the CDF is piecewise quadratic and
// is inverted exactly within each cell.
class InverseCdfSampler {
 public:
  explicit InverseCdfSampler(GridDensity density);

  // Maps u in [0, 1) to a position.
  double operator()(double u) const;
  double cdf(double x) const;
  const GridDensity& density() const { return density_; }

 private:
  GridDensity density_;
  std::vector<double> cumulative_;  // unnormalized CDF at grid points
};

double sample_from_pdf(const InverseCdfSampler& sampler, CounterStream& stream);

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;    // counts inside [lo, hi]
  std::uint64_t outside = 0;  // values that fell outside the range

  std::size_t bins() const { return counts.size(); }
  double width() const { return (hi - lo) / static_cast<double>(counts.size()); }
  double edge(std::size_t i) const { return lo + static_cast<double>(i) * width(); }
  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * width(); }
  std::vector<double> edges() const;
  std::vector<double> centers() const;
  // counts / (total * width)
  std::vector<double> density() const;

  void add(double value);
  void merge(const Histogram& other);
};

Histogram make_histogram(std::size_t bins, double lo, double hi);
Histogram build_histogram(std::span<const double> values, std::size_t bins, double lo, double hi);

struct HistogramAgreement {
  double chi2_per_bin = 0.0;  // over bins expecting at least 20 counts
  int bins_used = 0;
  double ks = 0.0;  // largest CDF gap at bin edges, both restricted to [lo, hi]
};

// Compares counts with total * (integral of density over each bin).
HistogramAgreement compare_histogram(const Histogram& histogram, const std::function<double(double)>& density);

struct HistogramLayout {
  std::size_t bins = 0;
  double lo = 0.0;
  double hi = 0.0;
};

// center +- half_width_sigmas * width, with bins_per_period bins per fringe
// period 2 pi / wavenumber. Throws ErrorKind::configuration for fewer than 8
// bins per period.
HistogramLayout fringe_layout(double center, double width, double wavenumber, double half_width_sigmas = 6.0,
                              double bins_per_period = 64.0);

struct FringeFit {
  double visibility = 0.0;  // in [0, 1]
  double wavenumber = 0.0;
  double width = 0.0;
  double center = 0.0;
  double phase = 0.0;
  double amplitude = 0.0;
  double residual_norm = 0.0;  // RMS of density residuals
  int iterations = 0;
};

// Least squares fit of A exp(-(x-mu)^2 / 2 sigma^2)[1 + v cos(k (x-mu) + phi)]
// to the histogram density, started at wavenumber k_hint.
FringeFit fit_fringe(const Histogram& histogram, double k_hint);

enum class Construction {
  // q + 1 devices, one per site, combined with the binomial weights.
  shared_sites,
  // 2^q independent devices: every pairwise subtraction in the order
  // recursion uses fresh devices, so site n + i hosts C(q, i) of them.
  independent_tree,
};

struct ExperimentOptions {
  int order = 1;
  std::uint64_t shots = 100000;
  std::uint64_t seed = 1;
  Construction construction = Construction::independent_tree;
  unsigned threads = 1;
  // Step of the noise path grid; 0 uses a single interval (exact for shot-constant noise).
  double path_step = 0.0;
  // Extra deterministic displacement sum_p c_p n^p added at site n.
  std::vector<double> injected_polynomial;
  bool keep_samples = false;
  double half_width_sigmas = 6.0;
  double bins_per_period = 64.0;
  double points_per_period = 128.0;  // sampler grid resolution
};

struct Leaf {
  int site = 0;
  double weight = 0.0;
};

std::vector<Leaf> construction_leaves(Construction construction, int q);

struct ExperimentResult {
  double overlap_time = 0.0;
  std::vector<Leaf> leaves;
  Histogram difference;            // x_{0,q}
  std::vector<Histogram> sites;    // one device per site 0..q
  std::vector<double> samples;     // x_{0,q} per shot when keep_samples is set
  std::vector<FringePattern> site_patterns;  // noiseless overlap patterns
  double difference_width = 0.0;   // envelope width of x_{0,q} without noise
  double difference_wavenumber = 0.0;  // 2^q k
};

ExperimentResult run_experiment(const ArraySpec& spec, const NoiseModel& model, const ExperimentOptions& options);

// Noiseless exact density of x_{0,q} for the given construction.
WeightedSumDensity difference_density(const ArraySpec& spec, int q, Construction construction);

}  // namespace mwi
