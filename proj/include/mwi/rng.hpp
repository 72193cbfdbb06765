#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace mwi {

// Philox4x32-10 block cipher (Salmon et al., SC'11).
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

// Counter-based random stream addressed by (seed, stream). Two streams with
// different addresses never overlap, and a stream's output does not depend
// on how many other streams were consumed before it. Satisfies
// UniformRandomBitGenerator.
class CounterStream {
 public:
  using result_type = std::uint32_t;

  CounterStream(std::uint64_t seed, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();

 private:
  PhiloxKey key_;
  PhiloxCounter counter_;
  PhiloxCounter block_{};
  int used_ = 4;
};

}  // namespace mwi
