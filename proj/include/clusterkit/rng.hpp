#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace clusterkit {

// Counter-based random numbers (Philox 4x32-10). Every draw is a pure
// function of (seed, stream, counter), so simulations can hand out
// non-overlapping streams per replicate and get bit-identical results for
// any worker count or iteration order.

namespace detail {

inline void philox_round(std::array<std::uint32_t, 4>& ctr,
                         const std::array<std::uint32_t, 2>& key) {
  constexpr std::uint64_t M0 = 0xD2511F53ull;
  constexpr std::uint64_t M1 = 0xCD9E8D57ull;
  const std::uint64_t p0 = M0 * ctr[0];
  const std::uint64_t p1 = M1 * ctr[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

inline std::array<std::uint32_t, 4> philox_block(std::uint64_t counter,
                                                 std::uint64_t stream,
                                                 std::uint64_t seed) {
  std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed),
                                      static_cast<std::uint32_t>(seed >> 32)};
  constexpr std::uint32_t W0 = 0x9E3779B9u;
  constexpr std::uint32_t W1 = 0xBB67AE85u;
  for (int r = 0; r < 10; ++r) {
    philox_round(ctr, key);
    key[0] += W0;
    key[1] += W1;
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

// Collapses a tag plus indices into a 64-bit stream id.
inline std::uint64_t stream_id(std::uint64_t tag, std::uint64_t a = 0,
                               std::uint64_t b = 0) {
  std::uint64_t h = detail::splitmix64(tag);
  h = detail::splitmix64(h ^ a);
  h = detail::splitmix64(h ^ b);
  return h;
}

// One (seed, stream) pair is an independent sequence of 2^64 draws.
class CounterRng {
public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() {
    const auto blk = detail::philox_block(counter_++, stream_, seed_);
    return (static_cast<std::uint64_t>(blk[0]) << 32) | blk[1];
  }

  // Uniform on [0,1), 53-bit resolution.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0,1]; safe under log().
  double next_uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Box-Muller; consumes two draws per normal.
  double next_normal() {
    const double u1 = next_uniform_pos();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(next_uniform() * static_cast<double>(n)) %
           n;
  }

private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

// Stateless single draws, for per-(replicate, cluster) weight schedules.
inline std::uint64_t draw_u64_at(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t index) {
  const auto blk = detail::philox_block(index, stream, seed);
  return (static_cast<std::uint64_t>(blk[0]) << 32) | blk[1];
}

inline double draw_uniform_at(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t index) {
  return static_cast<double>(draw_u64_at(seed, stream, index) >> 11) *
         0x1.0p-53;
}

}  // namespace clusterkit
