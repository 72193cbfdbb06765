#include <doctest.h>

#include <algorithm>
#include <set>

#include "mwi/rng.hpp"

using namespace mwi;

TEST_CASE("philox known answers") {
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) == PhiloxCounter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        PhiloxCounter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        PhiloxCounter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("counter streams are addressable and reproducible") {
  CounterStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a() == b());

  // Consuming other streams first does not change a stream.
  CounterStream c(42, 3);
  for (int i = 0; i < 100; ++i) c();
  CounterStream d(42, 7);
  CounterStream e(42, 7);
  for (int i = 0; i < 10; ++i) CHECK(d() == e());

  std::set<std::uint32_t> firsts;
  for (std::uint64_t s = 0; s < 1000; ++s) firsts.insert(CounterStream(1, s)());
  CHECK(firsts.size() >= 999);
  CHECK(CounterStream(1, 0)() != CounterStream(2, 0)());
}

TEST_CASE("uniform doubles lie in [0, 1) with the right mean") {
  CounterStream s(9, 0);
  double sum = 0.0, lo = 1.0, hi = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform();
    sum += u;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
}
