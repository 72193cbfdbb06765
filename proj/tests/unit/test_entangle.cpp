#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mwi/entangle.hpp"
#include "mwi/error.hpp"

using namespace mwi;
using doctest::Approx;

namespace {

const double kHalf = std::numbers::sqrt2 / 2.0;

ArmState bell() {
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(4);
  v(0) = kHalf;
  v(3) = kHalf;
  return ArmState::pure(1, v);
}

ArmState shared_pair_average() {
  const PhaseDistribution d[] = {PhaseDistribution::uniform(), PhaseDistribution::point(0.0)};
  return average_over_phases(gradient_family(2), d);
}

// Two-device basis index from per-qubit arms (A0 B0 A1 B1).
std::uint32_t idx(int a0, int b0, int a1, int b1) { return (a0 << 3) | (b0 << 2) | (a1 << 1) | b1; }

std::complex<double> entry(const SparseDensity& m, std::uint32_t r, std::uint32_t c) { return m.coeff(r, c); }

Eigen::Matrix2cd random_unitary(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Matrix2cd m;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) m(i, j) = {g(rng), g(rng)};
  Eigen::HouseholderQR<Eigen::Matrix2cd> qr(m);
  return qr.householderQ();
}

}  // namespace

TEST_CASE("device_state") {
  auto s = device_state(1, 0.4, 7.0);
  CHECK(s.amplitudes().norm() == Approx(1.0).epsilon(1e-15));
  CHECK(std::arg(s.amplitudes()(3)) == Approx(0.4));

  auto minus = device_state(2, 0.0, std::numbers::pi);
  CHECK(minus.amplitudes()(0).real() == Approx(kHalf));
  CHECK(minus.amplitudes()(3).real() == Approx(-kHalf));
  CHECK(std::abs(minus.amplitudes()(3).imag()) < 1e-15);
  CHECK_THROWS_AS(device_state(0, 0, 0), Error);
}

TEST_CASE("tensor_combine") {
  const double phi = 0.3, dphi = 0.45;
  const int j = 3;
  const ArmState two[] = {device_state(j, phi, dphi), device_state(j + 1, phi, dphi)};
  auto c = tensor_combine(two);
  CHECK(c.devices() == 2);
  const auto rrrr = c.amplitudes()(idx(1, 1, 1, 1));
  CHECK(std::abs(rrrr - std::polar(0.5, 2 * phi + (2 * j - 1) * dphi)) < 1e-15);

  SUBCASE("four devices contain the pairwise gradient component") {
    std::vector<ArmState> four;
    for (int k = 1; k <= 4; ++k) four.push_back(device_state(k, phi, dphi));
    auto s = tensor_combine(four);
    // Devices (1,2) in RL/LR and (3,4) in RL/LR: amplitudes carry exp(i(2 phi + m dphi)) / 4.
    auto at = [&](int a, int b, int c2, int d) {
      std::uint32_t i = 0;
      for (int bit : {a, a, b, b, c2, c2, d, d}) i = (i << 1) | static_cast<std::uint32_t>(bit);
      return s.amplitudes()(i);
    };
    CHECK(std::abs(at(1, 0, 1, 0) - std::polar(0.25, 2 * phi + 2 * dphi)) < 1e-15);
    CHECK(std::abs(at(0, 1, 1, 0) - std::polar(0.25, 2 * phi + 3 * dphi)) < 1e-15);
    CHECK(std::abs(at(1, 0, 0, 1) - std::polar(0.25, 2 * phi + 3 * dphi)) < 1e-15);
    CHECK(std::abs(at(0, 1, 0, 1) - std::polar(0.25, 2 * phi + 4 * dphi)) < 1e-15);
  }

  SUBCASE("no gradient gives two copies of the same pair") {
    std::vector<ArmState> four;
    for (int k = 1; k <= 4; ++k) four.push_back(device_state(k, phi, 0.0));
    const ArmState pair[] = {device_state(1, phi, 0.0), device_state(2, phi, 0.0)};
    auto p = tensor_combine(pair);
    const ArmState copies[] = {p, p};
    CHECK((tensor_combine(four).amplitudes() - tensor_combine(copies).amplitudes()).norm() < 1e-15);
  }

  SUBCASE("mixed states combine and match the pure product") {
    const ArmState mixed[] = {ArmState::mixed(1, two[0].density()), ArmState::mixed(1, two[1].density())};
    auto m = tensor_combine(mixed);
    CHECK(!m.is_pure());
    CHECK(fidelity(m, c) == Approx(1.0).epsilon(1e-14));
    const ArmState both[] = {two[0], mixed[0]};
    CHECK_THROWS_AS(tensor_combine(both), Error);
  }

  SUBCASE("capacity") {
    std::vector<ArmState> nine(9, device_state(1, 0, 0));
    try {
      tensor_combine(nine);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::capacity);
    }
  }
}

TEST_CASE("phase averaging") {
  SUBCASE("single device under uniform phase") {
    const PhaseDistribution d[] = {PhaseDistribution::uniform(), PhaseDistribution::point(0.0)};
    auto rho = average_over_phases(gradient_family(1), d).density();
    CHECK(entry(rho, 0, 0).real() == Approx(0.5));
    CHECK(entry(rho, 3, 3).real() == Approx(0.5));
    CHECK(std::abs(entry(rho, 0, 3)) == 0.0);
    CHECK(rho.nonZeros() == 2);
  }

  SUBCASE("two devices sharing the phase") {
    auto rho = shared_pair_average().density();
    CHECK(entry(rho, idx(0, 0, 0, 0), idx(0, 0, 0, 0)).real() == Approx(0.25));
    CHECK(entry(rho, idx(1, 1, 1, 1), idx(1, 1, 1, 1)).real() == Approx(0.25));
    // Half the weight sits on (|LLRR> + |RRLL>)/sqrt(2).
    CHECK(entry(rho, idx(0, 0, 1, 1), idx(1, 1, 0, 0)).real() == Approx(0.25));
    CHECK(entry(rho, idx(0, 0, 1, 1), idx(0, 0, 1, 1)).real() == Approx(0.25));
    CHECK(std::abs(entry(rho, idx(0, 0, 0, 0), idx(1, 1, 1, 1))) == 0.0);
  }

  SUBCASE("zero-width Gaussian leaves the state unchanged") {
    const PhaseDistribution d[] = {PhaseDistribution::gaussian(0.0, 0.8), PhaseDistribution::point(0.2)};
    auto avg = average_over_phases(gradient_family(3), d);
    const double phases[] = {0.8, 0.2};
    auto pure = gradient_family(3).at(phases);
    CHECK(fidelity(avg, pure) == Approx(1.0).epsilon(1e-14));
  }

  SUBCASE("analytic and quadrature averages agree") {
    const std::vector<PhaseDistribution> kinds = {PhaseDistribution::uniform(), PhaseDistribution::gaussian(0.6, 0.4),
                                                  PhaseDistribution::gaussian(3.0), PhaseDistribution::point(1.1)};
    for (int copies : {1, 2, 4}) {
      auto family = gradient_family(copies);
      for (const auto& a : kinds) {
        for (const auto& b : kinds) {
          const PhaseDistribution d[] = {a, b};
          auto exact = average_over_phases(family, d).density();
          auto quad = average_over_phases([&](std::span<const double> p) { return family.at(p); }, copies, d).density();
          SparseDensity diff = exact - quad;
          double worst = 0.0;
          for (Eigen::Index k = 0; k < diff.outerSize(); ++k)
            for (SparseDensity::InnerIterator it(diff, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
          CHECK(worst <= 1e-10);
        }
      }
    }
  }

  SUBCASE("independent phases") {
    const PhaseDistribution d[] = {PhaseDistribution::uniform(), PhaseDistribution::uniform()};
    auto avg = average_over_phases(independent_family(2), d);
    CHECK(log_negativity(avg) < 1e-12);
  }

  SUBCASE("averages stay valid density matrices") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    for (int i = 0; i < 20; ++i) {
      const PhaseDistribution d[] = {PhaseDistribution::gaussian(u(rng), u(rng)), PhaseDistribution::gaussian(u(rng))};
      CHECK_NOTHROW(validate_density(average_over_phases(gradient_family(1 + i % 4), d)));
    }
  }
}

TEST_CASE("log_negativity") {
  CHECK(log_negativity(bell()) == Approx(1.0).epsilon(1e-12));
  const PhaseDistribution u1[] = {PhaseDistribution::uniform(), PhaseDistribution::point(0.0)};
  CHECK(log_negativity(average_over_phases(gradient_family(1), u1)) <= 1e-12);
  CHECK(log_negativity(shared_pair_average()) == Approx(std::log2(1.5)).epsilon(1e-12));
  CHECK(std::log2(1.5) == Approx(0.5849625007).epsilon(1e-10));

  SUBCASE("product states carry no entanglement") {
    Eigen::VectorXcd v = Eigen::VectorXcd::Zero(16);
    v(idx(0, 1, 1, 0)) = 1.0;
    CHECK(log_negativity(ArmState::pure(2, v)) == 0.0);
  }

  SUBCASE("invariant under local unitaries") {
    std::mt19937_64 rng(13);
    const Eigen::MatrixXcd rho = Eigen::MatrixXcd(shared_pair_average().density());
    for (int i = 0; i < 20; ++i) {
      // Qubit order A0 B0 A1 B1; the A side gets U_A0 and U_A1, the B side identity, and vice versa.
      const Eigen::Matrix2cd id = Eigen::Matrix2cd::Identity();
      const Eigen::Matrix2cd ua0 = random_unitary(rng), ua1 = random_unitary(rng);
      const Eigen::Matrix2cd ub0 = random_unitary(rng), ub1 = random_unitary(rng);
      auto kron4 = [](const Eigen::Matrix2cd& a, const Eigen::Matrix2cd& b, const Eigen::Matrix2cd& c,
                      const Eigen::Matrix2cd& d) {
        Eigen::MatrixXcd out(16, 16);
        for (int r = 0; r < 16; ++r)
          for (int s = 0; s < 16; ++s)
            out(r, s) = a(r >> 3 & 1, s >> 3 & 1) * b(r >> 2 & 1, s >> 2 & 1) * c(r >> 1 & 1, s >> 1 & 1) * d(r & 1, s & 1);
        return out;
      };
      for (const Eigen::MatrixXcd u : {kron4(ua0, id, ua1, id), kron4(id, ub0, id, ub1), kron4(ua0, ub0, ua1, ub1)}) {
        const Eigen::MatrixXcd rotated = u * rho * u.adjoint();
        const SparseDensity sparse = rotated.sparseView(1e-300);
        CHECK(log_negativity(ArmState::mixed(2, sparse)) == Approx(std::log2(1.5)).epsilon(1e-10));
      }
    }
  }

  SUBCASE("rejects invalid states") {
    Eigen::MatrixXcd bad = Eigen::MatrixXcd::Zero(4, 4);
    bad(0, 0) = 1.2;
    bad(3, 3) = -0.2;
    try {
      log_negativity(ArmState::mixed(1, bad.sparseView()));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::invalid_state);
    }
    Eigen::MatrixXcd half = Eigen::MatrixXcd::Identity(4, 4) * 0.5;
    CHECK_THROWS_AS(log_negativity(ArmState::mixed(1, half.sparseView())), Error);
  }
}

TEST_CASE("local measurement") {
  auto outcomes = local_measurement(shared_pair_average());
  REQUIRE(outcomes.size() == 3);
  CHECK(outcomes[0].outcome == 1);
  CHECK(outcomes[1].outcome == 2);
  CHECK(outcomes[2].outcome == 3);
  CHECK(outcomes[0].probability == Approx(0.25));
  CHECK(outcomes[1].probability == Approx(0.5));
  CHECK(outcomes[2].probability == Approx(0.25));

  Eigen::VectorXcd phi = Eigen::VectorXcd::Zero(16);
  phi(idx(0, 0, 1, 1)) = kHalf;
  phi(idx(1, 1, 0, 0)) = kHalf;
  const auto target = ArmState::pure(2, phi);
  CHECK(fidelity(outcomes[1].post_state, target) == Approx(1.0).epsilon(1e-12));
  CHECK(log_negativity(outcomes[1].post_state) == Approx(1.0).epsilon(1e-12));
  CHECK(log_negativity(outcomes[0].post_state) <= 1e-12);
  CHECK(log_negativity(outcomes[2].post_state) <= 1e-12);
  CHECK(average_post_measurement_entanglement(outcomes) == Approx(0.5).epsilon(1e-12));
  CHECK(average_post_measurement_entanglement(outcomes) <= log_negativity(shared_pair_average()));

  CHECK_THROWS_AS(local_measurement(bell()), Error);
}

TEST_CASE("recovered entanglement") {
  const auto u = PhaseDistribution::uniform();
  const auto still = PhaseDistribution::point(0.0);
  CHECK(recovered_entanglement(1, u, still) <= 1e-12);
  CHECK(recovered_entanglement(2, u, still) == Approx(std::log2(1.5)).epsilon(1e-12));
  const double four = recovered_entanglement(4, u, u);
  CHECK(four > 0.0);
  CHECK(four == Approx(std::log2(9.0 / 8.0)).epsilon(1e-12));

  CHECK(measured_entanglement(1, u, still) <= 1e-12);
  CHECK(measured_entanglement(2, u, still) == Approx(0.5).epsilon(1e-12));
  // The nested pair measurement recovers one ebit with probability 1/8, and can
  // never exceed the entanglement of the averaged state.
  const double nested = measured_entanglement(4, u, u);
  CHECK(nested == Approx(0.125).epsilon(1e-12));
  CHECK(nested <= four);
  // Two copies alone lose everything once the gradient is uniform.
  CHECK(recovered_entanglement(2, u, u) <= 1e-12);

  CHECK_THROWS_AS(measured_entanglement(3, u, u), Error);
  CHECK_THROWS_AS(recovered_entanglement(9, u, u), Error);
  CHECK_NOTHROW(recovered_entanglement(8, u, u));
}
