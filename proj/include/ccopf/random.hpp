#pragma once

// Counter-based random numbers: Philox4x32-10 (Salmon et al., Random123) and
// standard normals drawn from it. A sample's stream depends only on (seed,
// sample index), so any partition of the samples over workers produces the
// same draws.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace ccopf {

class Philox4x32 {
public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter c, Key k) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        k[0] += kW0;
        k[1] += kW1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
      c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
    }
    return c;
  }

private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
};

/// Standard normals for one sample, via Box-Muller on 52-bit uniforms.
class NormalStream {
public:
  NormalStream(std::uint64_t seed, std::uint64_t sample)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        lo_(static_cast<std::uint32_t>(sample)), hi_(static_cast<std::uint32_t>(sample >> 32)) {}

  double operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const auto r = Philox4x32::block({block_++, 0u, lo_, hi_}, key_);
    const double u1 = uniform(r[0], r[1]), u2 = uniform(r[2], r[3]);
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = rad * std::sin(ang);
    have_spare_ = true;
    return rad * std::cos(ang);
  }

  /// Uniform on the open interval (0, 1).
  static double uniform(std::uint32_t a, std::uint32_t b) {
    const std::uint64_t x = ((static_cast<std::uint64_t>(a) << 32) | b) >> 12;
    return (static_cast<double>(x) + 0.5) * 0x1.0p-52;
  }

private:
  Philox4x32::Key key_;
  std::uint32_t lo_, hi_;
  std::uint32_t block_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ccopf
