#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mwi/error.hpp"
#include "mwi/oracle.hpp"

using namespace mwi;
using doctest::Approx;

namespace {

const GridParameters kSmallGrid{4096, 0.125};

InterferometerSpec cat(double ar, double ai) {
  InterferometerSpec s;
  s.alpha = {ar, ai};
  return s;
}

NoisePath constant_path(double g, double duration) {
  NoisePath p;
  p.times = {0.0, duration};
  p.values = {{g, g}};
  return p;
}

GridDensity analytic_on(const GridState& st, const PositionDensity& pdf) {
  GridDensity d = st.probability();
  for (std::size_t i = 0; i < d.size(); ++i) d.values[i] = pdf(d.x(i));
  return d;
}

// Mean position restricted to x > 0.
double right_centroid(const GridState& st) {
  double m = 0.0, s = 0.0;
  for (std::size_t j = 0; j < st.size(); ++j) {
    if (st.x(j) <= 0.0) continue;
    m += std::norm(st.amplitudes[j]);
    s += std::norm(st.amplitudes[j]) * st.x(j);
  }
  return s / m;
}

}  // namespace

TEST_CASE("prepare_cat") {
  auto zero = prepare_cat(cat(0, 0), kSmallGrid);
  CHECK(zero.norm() == Approx(1.0).epsilon(1e-9));
  const double peak = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  CHECK(std::norm(zero.amplitudes[zero.size() / 2]) == Approx(peak).epsilon(1e-12));
  CHECK(std::norm(zero.amplitudes[zero.size() / 2 + 8]) == Approx(peak * std::exp(-0.5)).epsilon(1e-12));

  auto apart = prepare_cat(cat(3, 0), kSmallGrid);
  CHECK(apart.norm() == Approx(1.0).epsilon(1e-9));
  CHECK(right_centroid(apart) == Approx(6.0).epsilon(1e-6));

  // Small |alpha|: the overlap term in N_alpha^2 is what keeps the norm at one.
  for (double a : {0.1, 0.3, 0.7}) CHECK(prepare_cat(cat(a, -a / 2), kSmallGrid).norm() == Approx(1.0).epsilon(1e-9));

  try {
    prepare_cat(cat(200, 0), kSmallGrid);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::resolution);
  }
  CHECK_THROWS_AS(prepare_cat(cat(0, 0), GridParameters{4096, 0.5}), Error);
  CHECK_THROWS_AS(prepare_cat(cat(0, 30), GridParameters{4096, 0.125}), Error);
}

TEST_CASE("split-step evolution") {
  auto spec = cat(-4, 2);
  const double tk = overlap_time(spec);
  auto initial = prepare_cat(spec, kSmallGrid);
  const int steps = minimum_split_steps(initial, tk);

  SUBCASE("free cat at overlap matches the fringe pattern") {
    auto st = evolve_split_step(initial, constant_path(0.0, tk), tk, steps);
    CHECK(st.norm() == Approx(1.0).epsilon(1e-9));
    auto d = compare_distributions(st.probability(), analytic_on(st, position_pdf(spec, tk)));
    CHECK(d.l1 <= 1e-3);
    auto pattern = pattern_at_overlap(spec);
    CHECK(compare_distributions(st.probability(), analytic_on(st, PositionDensity(packet_geometry(spec, tk)))).linf <=
          1e-6);
    CHECK(pattern(0.3) == Approx(position_pdf(spec, tk)(0.3)).epsilon(1e-12));
  }

  SUBCASE("separated packets follow the classical trajectory") {
    auto wide = cat(-8, 1);
    auto st0 = prepare_cat(wide, kSmallGrid);
    auto st = evolve_split_step(st0, constant_path(0.0, 1.0), 1.0, minimum_split_steps(st0, 1.0));
    auto g = packet_geometry(wide, 1.0);
    CHECK(right_centroid(st) == Approx(std::abs(g.center_plus)).epsilon(1e-9));

    const double acc = 0.2;
    auto pushed = evolve_split_step(st0, constant_path(acc, 1.0), 1.0, minimum_split_steps(st0, 1.0));
    CHECK(right_centroid(pushed) - right_centroid(st) == Approx(-0.5 * acc).epsilon(1e-6));
    CHECK(pushed.centroid() == Approx(-0.5 * acc).epsilon(1e-9));
  }

  SUBCASE("OU paths: density and centroid follow the displacement functional") {
    NoiseModel model{{OrnsteinUhlenbeckProcess{0.4, 0.5}}};
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto path = sample_path(model, tk, 1e-3, seed);
      auto st = evolve_split_step(initial, path, tk, 2000);
      const double xg = displacement_coefficients(path, tk).values[0];
      auto d = compare_distributions(st.probability(), analytic_on(st, position_pdf(spec, tk, xg)));
      CHECK(d.l1 <= 1e-3);
      CHECK(st.centroid() == Approx(xg).epsilon(1e-6));
      CHECK(st.norm() == Approx(1.0).epsilon(1e-9));
    }
  }

  SUBCASE("refining the steps converges to the exact displacement") {
    NoisePath smooth;
    smooth.times = time_grid(tk, 1e-4);
    smooth.values.emplace_back();
    for (double t : smooth.times) smooth.values[0].push_back(0.3 * std::sin(3.0 * t));
    const double exact = 0.3 * (std::sin(3.0 * tk) / 9.0 - tk / 3.0);
    double last = 0.0;
    for (int n : {steps, 2 * steps, 4 * steps}) {
      const double err = std::abs(evolve_split_step(initial, smooth, tk, n).centroid() - exact);
      if (last > 0.0) CHECK(err < last);
      last = err;
    }
    CHECK(last <= 1e-6 * std::abs(exact));
  }

  SUBCASE("contract violations") {
    try {
      evolve_split_step(initial, constant_path(0.0, tk), tk, steps / 2);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::step_size);
    }
    try {
      // Drifts to x = -240, inside the outer tenth of the +-256 grid.
      evolve_split_step(initial, constant_path(1.2, 20.0), 20.0, minimum_split_steps(initial, 20.0));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::boundary);
    }
    CHECK_THROWS_AS(evolve_split_step(initial, constant_path(0.0, 1.0), tk, steps), Error);
  }
}

TEST_CASE("magnus quantities") {
  auto spec = cat(-4, 2);
  auto zero = magnus_quantities(constant_path(0.0, 2.0), spec, 2.0);
  CHECK(zero.gamma == std::complex<double>(0.0, 0.0));
  CHECK(zero.phase == 0.0);

  const double g = 0.7, t = 1.5;
  NoisePath p;
  p.times = time_grid(2.0, 0.01);
  p.values = {std::vector<double>(p.times.size(), g)};
  auto r = magnus_quantities(p, spec, t);
  const std::complex<double> expected = std::complex<double>(0.0, -0.5 * g) * std::complex<double>(t, 0.5 * t * t);
  CHECK(r.gamma.real() == Approx(expected.real()).epsilon(1e-12));
  CHECK(r.gamma.imag() == Approx(expected.imag()).epsilon(1e-12));

  auto real = cat(1.3, 0.0);
  CHECK(magnus_quantities(p, real, t).phase == Approx(-0.5 * 1.3 * g * t).epsilon(1e-12));

  SUBCASE("quadrature converges at second order") {
    auto path_at = [](double step) {
      NoisePath q;
      q.times = time_grid(2.0, step);
      q.values.emplace_back();
      for (double s : q.times) q.values[0].push_back(std::cos(2.0 * s));
      return q;
    };
    auto fine = magnus_quantities(path_at(1e-5), spec, 2.0).gamma;
    const double e1 = std::abs(magnus_quantities(path_at(0.02), spec, 2.0).gamma - fine);
    const double e2 = std::abs(magnus_quantities(path_at(0.01), spec, 2.0).gamma - fine);
    CHECK(e1 / e2 == Approx(4.0).epsilon(0.05));
  }
  CHECK_THROWS_AS(magnus_quantities(p, spec, 3.0), Error);
}

TEST_CASE("compare_distributions") {
  GridDensity a = tabulate([](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); }, -12, 12, 4801);
  auto same = compare_distributions(a, a);
  CHECK(same.l1 == 0.0);
  CHECK(same.linf == 0.0);
  CHECK(same.ks == 0.0);

  const double delta = 1e-3;
  GridDensity b = tabulate(
      [&](double x) { return std::exp(-0.5 * (x - delta) * (x - delta)) / std::sqrt(2 * std::numbers::pi); }, -12, 12, 4801);
  auto d = compare_distributions(a, b);
  CHECK(d.l1 == Approx(delta * std::sqrt(2.0 / std::numbers::pi)).epsilon(1e-3));
  CHECK(compare_distributions(b, a).l1 == d.l1);

  GridDensity left = tabulate([](double x) { return x < 0 ? 0.1 : 0.0; }, -10, 10, 2001);
  GridDensity right = tabulate([](double x) { return x > 0 ? 0.1 : 0.0; }, -10, 10, 2001);
  CHECK(compare_distributions(left, right).l1 == Approx(2.0).epsilon(1e-3));

  try {
    compare_distributions(a, left);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::alignment);
  }
}
