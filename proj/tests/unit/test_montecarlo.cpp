#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "mwi/error.hpp"
#include "mwi/montecarlo.hpp"

using namespace mwi;
using doctest::Approx;

namespace {

template <class F>
double integrate(F f, double lo, double hi) {
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 10, 1e-12);
}

std::vector<double> draw(const FringePattern& p, std::size_t n, std::uint64_t seed) {
  InverseCdfSampler sampler(sample_on_grid(p));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterStream s(seed, i);
    out[i] = sample_from_pdf(sampler, s);
  }
  return out;
}

// Reduced chi-square of a histogram against an analytic density integrated over each bin.
template <class Density>
double chi2_per_bin(const Histogram& h, const Density& density) {
  double chi2 = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < h.bins(); ++i) {
    const double expected = static_cast<double>(h.total) * integrate(density, h.edge(i), h.edge(i + 1));
    if (expected < 20.0) continue;
    const double d = static_cast<double>(h.counts[i]) - expected;
    chi2 += d * d / expected;
    ++used;
  }
  REQUIRE(used > 50);
  return chi2 / used;
}

double histogram_ks(const Histogram& a, const Histogram& b) {
  double ca = 0.0, cb = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < a.bins(); ++i) {
    ca += static_cast<double>(a.counts[i]) / static_cast<double>(a.total);
    cb += static_cast<double>(b.counts[i]) / static_cast<double>(b.total);
    worst = std::max(worst, std::abs(ca - cb));
  }
  return worst;
}

ArraySpec equal_array(int n, double k, double sigma) {
  ArraySpec a;
  a.devices.assign(static_cast<std::size_t>(n), spec_for_pattern(k, sigma));
  return a;
}

}  // namespace

TEST_CASE("inverse-CDF sampling") {
  const std::size_t n = 1000000;
  SUBCASE("Gaussian moments") {
    FringePattern gauss{1.0, 2.0, 0.0, 0.5};
    auto xs = draw(gauss, n, 1);
    double mean = 0.0, var = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n - 1;
    CHECK(std::abs(mean - 0.5) <= 4.0 * 2.0 / 1e3);
    CHECK(var == Approx(4.0).epsilon(0.01));
  }

  SUBCASE("fringe density KS distance") {
    FringePattern p{1.0, 3.0, 4.0, 0.0};
    auto xs = draw(p, n, 2);
    std::sort(xs.begin(), xs.end());
    double cdf = 0.0, worst = 0.0, last = -30.0;
    std::size_t j = 0;
    for (double x = -27.0; x <= 27.0; x += 0.01) {
      cdf += integrate(p, last, x);
      last = x;
      while (j < xs.size() && xs[j] <= x) ++j;
      worst = std::max(worst, std::abs(static_cast<double>(j) / n - cdf));
    }
    CHECK(worst <= 0.002);
  }

  SUBCASE("piecewise-linear inversion is exact") {
    GridDensity g{0.0, 1.0, {0.0, 2.0, 1.0}};
    InverseCdfSampler s(g);
    for (double u = 0.0; u < 1.0; u += 0.01) CHECK(s.cdf(s(u)) == Approx(u).epsilon(1e-12).scale(1e-12));
  }

  CHECK_THROWS_AS(InverseCdfSampler(GridDensity{0.0, 1.0, {1.0, NAN, 1.0}}), Error);
  CHECK_THROWS_AS(InverseCdfSampler(GridDensity{0.0, 1.0, {0.0, 0.0}}), Error);
}

TEST_CASE("histograms") {
  std::vector<double> v{0, 0, 0, 1};
  auto h = build_histogram(v, 2, 0.0, 1.0);
  CHECK(h.counts == std::vector<std::uint64_t>{3, 1});
  CHECK(h.total == 4);
  double mass = 0.0;
  for (double d : h.density()) mass += d * h.width();
  CHECK(mass == Approx(1.0));
  try {
    build_histogram(std::vector<double>{}, 2, 0, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::empty_data);
  }

  SUBCASE("standard normal") {
    auto xs = draw(FringePattern{1.0, 1.0, 0.0, 0.0}, 1000000, 3);
    auto hist = build_histogram(xs, 100, -5.0, 5.0);
    auto d = hist.density();
    const boost::math::normal_distribution<double> phi;
    double worst = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) worst = std::max(worst, std::abs(d[i] - boost::math::pdf(phi, hist.center(i))));
    CHECK(worst <= 0.005);
  }

  SUBCASE("merge is order independent") {
    auto a = make_histogram(10, 0, 1), b = make_histogram(10, 0, 1);
    for (int i = 0; i < 100; ++i) (i % 3 ? a : b).add(i / 100.0);
    auto ab = a, ba = b;
    ab.merge(b);
    ba.merge(a);
    CHECK(ab.counts == ba.counts);
    CHECK(ab.total == 100);
    CHECK_THROWS_AS(a.merge(make_histogram(11, 0, 1)), Error);
  }

  SUBCASE("fringe layout") {
    auto layout = fringe_layout(0.0, 10.0, 1.0);
    CHECK(layout.lo == -60.0);
    CHECK(layout.hi == 60.0);
    CHECK(static_cast<double>(layout.bins) >= 120.0 / (2 * std::numbers::pi) * 64.0);
    CHECK_THROWS_AS(fringe_layout(0.0, 10.0, 1.0, 6.0, 4.0), Error);
  }
}

TEST_CASE("compare_histogram") {
  FringePattern p{1.0, 3.0, 2.0, 0.0};
  auto xs = draw(p, 400000, 21);
  auto hist = build_histogram(xs, 400, -18.0, 18.0);
  const auto agree = compare_histogram(hist, p);
  CHECK(agree.chi2_per_bin == Approx(chi2_per_bin(hist, p)).epsilon(1e-6));
  CHECK(agree.bins_used > 200);
  CHECK(agree.ks <= 1.36 / std::sqrt(4e5) * 1.5);

  // A wrong wavenumber is visible in both statistics.
  const auto off = compare_histogram(hist, FringePattern{1.0, 3.0, 2.2, 0.0});
  CHECK(off.chi2_per_bin > 10.0);

  CHECK_THROWS_AS(compare_histogram(make_histogram(4, 0, 1), p), Error);
}

TEST_CASE("fringe fit") {
  const std::size_t n = 1000000;
  for (auto [offset, expected] : {std::pair{1.0, 1.0}, std::pair{2.0, 0.5}}) {
    FringePattern p{offset, 10.0, 1.0, 0.0};
    auto xs = draw(p, n, 4);
    auto layout = fringe_layout(0.0, 10.0, 1.0);
    auto fit = fit_fringe(build_histogram(xs, layout.bins, layout.lo, layout.hi), 1.0);
    CHECK(fit.visibility == Approx(expected).epsilon(0.02 / expected));
    CHECK(fit.wavenumber == Approx(1.0).epsilon(1e-3));
    CHECK(fit.width == Approx(10.0).epsilon(0.01));
    CHECK(fit.visibility <= 1.0);
  }

  FringePattern gauss{1.0, 10.0, 0.0, 0.0};
  auto xs = draw(gauss, n, 5);
  auto layout = fringe_layout(0.0, 10.0, 1.0);
  for (double hint : {0.7, 1.0, 2.0}) {
    auto fit = fit_fringe(build_histogram(xs, layout.bins, layout.lo, layout.hi), hint);
    CHECK(fit.visibility <= 0.01);
  }

  auto narrow = build_histogram(xs, 64, -1.0, 1.0);
  CHECK_THROWS_AS(fit_fringe(narrow, 1.0), Error);
}

TEST_CASE("run_experiment") {
  SUBCASE("noiseless single device matches the overlap pattern") {
    auto array = equal_array(1, 1.0, 10.0);
    ExperimentOptions o;
    o.order = 0;
    o.shots = 1000000;
    auto r = run_experiment(array, NoiseModel{}, o);
    CHECK(r.difference.total + r.difference.outside == o.shots);
    CHECK(chi2_per_bin(r.difference, r.site_patterns[0]) == Approx(1.0).epsilon(0.1));
  }

  SUBCASE("shot-constant noise matches the averaged pattern") {
    auto array = equal_array(1, 1.0, 10.0);
    const double tk = overlap_time(array.devices[0]);
    const double sigma_gamma = 1.5;
    NoiseModel model{{ShotConstantProcess{0.0, 2.0 * sigma_gamma / (tk * tk)}}};
    ExperimentOptions o;
    o.order = 0;
    o.shots = 1000000;
    auto r = run_experiment(array, model, o);
    auto avg = averaged_pdf(r.site_patterns[0], sigma_gamma);
    CHECK(chi2_per_bin(r.difference, avg) == Approx(1.0).epsilon(0.1));
  }

  SUBCASE("pair difference matches the closed form") {
    auto array = equal_array(2, 1.0, 4.0);
    ExperimentOptions o;
    o.shots = 1000000;
    auto r = run_experiment(array, NoiseModel{{ShotConstantProcess{0.0, 1.0}}}, o);
    auto exact = convolve_patterns(r.site_patterns[0], r.site_patterns[1]);
    CHECK(chi2_per_bin(r.difference, exact) == Approx(1.0).epsilon(0.1));
  }

  SUBCASE("results do not depend on the thread count") {
    auto array = equal_array(3, 1.0, 10.0);
    NoiseModel model{{OrnsteinUhlenbeckProcess{0.5, 0.01}, ShotConstantProcess{0.0, 0.001}}};
    ExperimentOptions o;
    o.order = 2;
    o.shots = 20000;
    o.path_step = 0.5;
    o.keep_samples = true;
    auto one = run_experiment(array, model, o);
    o.threads = 3;
    auto three = run_experiment(array, model, o);
    CHECK(one.difference.counts == three.difference.counts);
    CHECK(one.samples == three.samples);
    for (std::size_t s = 0; s < one.sites.size(); ++s) CHECK(one.sites[s].counts == three.sites[s].counts);
  }

  SUBCASE("injected polynomial fields of lower degree cancel") {
    auto array = equal_array(4, 1.0, 10.0);
    for (int q = 1; q <= 3; ++q) {
      ExperimentOptions o;
      o.order = q;
      o.shots = 200000;
      auto clean = run_experiment(array, NoiseModel{}, o);
      o.injected_polynomial.assign(static_cast<std::size_t>(q), 0.0);
      for (int p = 0; p < q; ++p) o.injected_polynomial[static_cast<std::size_t>(p)] = 37.0 / (p + 1);
      auto dirty = run_experiment(array, NoiseModel{}, o);
      CHECK(histogram_ks(clean.difference, dirty.difference) <= 1.36 * 2.0 / std::sqrt(double(o.shots)));
    }
  }

  SUBCASE("errors") {
    auto array = equal_array(2, 1.0, 10.0);
    ExperimentOptions o;
    o.order = 2;
    CHECK_THROWS_AS(run_experiment(array, NoiseModel{}, o), Error);
    o.order = 1;
    o.shots = 0;
    CHECK_THROWS_AS(run_experiment(array, NoiseModel{}, o), Error);
  }
}

TEST_CASE("construction leaves") {
  auto shared = construction_leaves(Construction::shared_sites, 3);
  REQUIRE(shared.size() == 4);
  CHECK(shared[1].weight == -0.375);
  auto tree = construction_leaves(Construction::independent_tree, 3);
  REQUIRE(tree.size() == 8);
  std::vector<double> per_site(4, 0.0);
  for (const auto& l : tree) per_site[static_cast<std::size_t>(l.site)] += l.weight;
  CHECK(per_site == std::vector<double>{0.125, -0.375, 0.375, -0.125});
}
