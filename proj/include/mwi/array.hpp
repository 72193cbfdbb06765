#pragma once

#include <span>
#include <vector>

#include "mwi/noisefield.hpp"
#include "mwi/wavepacket.hpp"

// Arrays of interferometers on a line with spacing h. Binomial difference
// variables x_{n,q} cancel every polynomial displacement field of degree < q;
// their fringe patterns follow from pairwise convolution.

namespace mwi {

inline constexpr double kDefaultEtaTolerance = 1e-6;

struct ArraySpec {
  std::vector<InterferometerSpec> devices;  // devices[n] sits at n h
  double spacing = 1.0;
};

// Passes iff all overlap times agree and every at-overlap wavenumber
// 2 alpha_i / x0 agrees within 1e-12 relative. Throws ErrorKind::configuration
// naming the first offending pair.
void validate_matched_wavenumbers(const ArraySpec& spec);

// [(-1)^i C(q,i) / 2^q] for i = 0..q.
std::vector<double> difference_weights(int q);

struct DifferenceVariable {
  int base = 0;
  int order = 0;
  std::vector<double> weights;  // over sites base .. base + order
};

DifferenceVariable make_difference_variable(int n, int q);

double difference_variable(std::span<const double> positions, int n, int q);

// x_{n,q} = (x_{n,q-1} - x_{n+1,q-1}) / 2, evaluated literally.
double difference_variable_recursive(std::span<const double> positions, int n, int q);

// q! h^q x_gamma^(q) / 2^q, the leading shift of x_{n,q}.
double residual_fluctuation(const DisplacementCoefficients& coeffs, double h, int q);

// Exact density of x_- = (x_1 - x_2)/2 for independent x_1, x_2 drawn from two
// patterns with equal offset a and wavenumber k:
//   exp(-y^2 / 2 s+^2) {2a^2 + cos(2ky) + 2 eta a [cos(s1^2 k y / 2 s+^2) + cos(s2^2 k y / 2 s+^2)]
//                       + eta^4 cos((s1^2 - s2^2) k y / 2 s+^2)} / N,
// with y = x_- - (mu_1 - mu_2)/2, s+^2 = (s1^2 + s2^2)/4 and
// eta = exp(-k^2 s1^2 s2^2 / (8 s+^2)).
class PairDifferenceDensity {
 public:
  PairDifferenceDensity(const FringePattern& first, const FringePattern& second);

  double operator()(double x) const;
  double normalization() const { return normalization_; }
  double eta() const { return eta_; }
  double sigma_plus() const { return sigma_plus_; }
  double center() const { return center_; }

  // The dominant term, exp(-y^2 / 2 s+^2)[2a^2 + cos(2ky)], in canonical form.
  FringePattern leading() const;

 private:
  double unnormalized(double x) const;

  double offset_, wavenumber_, sigma1_sq_, sigma2_sq_;
  double sigma_plus_, eta_, center_, normalization_;
};

PairDifferenceDensity convolve_patterns(const FringePattern& first, const FringePattern& second);

struct ReductionStep {
  FringePattern pattern;
  double eta = 0.0;
};

// Drops the eta terms: a' = 2a^2, sigma'^2 = (s1^2 + s2^2)/4, k' = 2k.
// Throws TruncationError when eta > eta_tolerance.
ReductionStep reduce_order(const FringePattern& first, const FringePattern& second,
                           double eta_tolerance = kDefaultEtaTolerance);

struct PatternRecursionState {
  int order = 0;
  std::vector<FringePattern> patterns;  // patterns[n] describes x_{n,order}
  std::vector<std::vector<double>> etas;  // etas[q][n]: discarded factor building x_{n,q+1}
};

PatternRecursionState initial_recursion_state(const ArraySpec& spec);
PatternRecursionState advance(const PatternRecursionState& state, double eta_tolerance = kDefaultEtaTolerance);

// Pattern of x_{0,q} obtained by folding reduce_order over the array.
FringePattern recursive_pattern(const ArraySpec& spec, int q, double eta_tolerance = kDefaultEtaTolerance);
PatternRecursionState recursive_state(const ArraySpec& spec, int q, double eta_tolerance = kDefaultEtaTolerance);

// Exact density of sum_i w_i X_i for independent X_i ~ patterns[i]. The
// characteristic function of each pattern is a sum of three Gaussians, so the
// density is a finite sum of Gaussian-times-cosine terms sharing one envelope.
class WeightedSumDensity {
 public:
  WeightedSumDensity(std::span<const FringePattern> patterns, std::span<const double> weights);

  double operator()(double x) const;
  double envelope_width() const { return std::sqrt(variance_); }
  double center() const { return center_; }
  // Total weight of all cosine terms with the given wavenumber (within 1e-9 relative).
  double amplitude_at(double wavenumber) const;
  // amplitude_at(wavenumber) / amplitude of the constant term.
  double visibility_at(double wavenumber) const;
  // Density of this variable plus an independent N(shift, s^2) displacement.
  WeightedSumDensity smeared(double displacement_std, double shift = 0.0) const;

 private:
  struct Term {
    double wavenumber;
    double amplitude;
  };
  WeightedSumDensity() = default;

  std::vector<Term> terms_;
  double variance_ = 0.0;
  double center_ = 0.0;
};

}  // namespace mwi
