#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

namespace bimce {

/// SplitMix64 finalizer. Used both as the PRNG step and to derive
/// independent child seeds from (seed, tag, counter) tuples, so that
/// per-sample streams are order-independent under parallel generation.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag ^ 0x6a09e667f3bcc909ull));
}

inline uint64_t derive_seed(uint64_t seed, uint64_t tag, uint64_t counter) {
  return splitmix64(derive_seed(seed, tag) ^ splitmix64(counter ^ 0xbb67ae8584caa73bull));
}

/// Purpose tags for seed derivation; one per independent random stream.
namespace seed_tag {
inline constexpr uint64_t kTapAngle = 0x01;
inline constexpr uint64_t kTapUeGain = 0x02;
inline constexpr uint64_t kTapDoppler = 0x03;
inline constexpr uint64_t kNoise = 0x04;
inline constexpr uint64_t kDataBits = 0x05;
inline constexpr uint64_t kPilotSeq = 0x06;
inline constexpr uint64_t kWeightInit = 0x07;
inline constexpr uint64_t kShuffle = 0x08;
inline constexpr uint64_t kTrainSample = 0x09;
inline constexpr uint64_t kValSample = 0x0a;
inline constexpr uint64_t kTestSample = 0x0b;
inline constexpr uint64_t kEbno = 0x0c;
inline constexpr uint64_t kBootstrap = 0x0d;
inline constexpr uint64_t kCalibSample = 0x0e;
}  // namespace seed_tag

/// Counter-based generator (SplitMix64 stream). Gaussians come from
/// Box-Muller on explicit uniforms so sequences are bit-reproducible
/// across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x5851f42d4c957f2dull)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// One u32 in [0, n).
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  /// Standard normal pair (Box-Muller).
  void gaussian_pair(double& a, double& b) {
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), u1 in [0,1)
    double t = 2.0 * std::numbers::pi * u2;
    a = r * std::cos(t);
    b = r * std::sin(t);
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double a, b;
    gaussian_pair(a, b);
    spare_ = b;
    have_spare_ = true;
    return a;
  }

  /// Circularly-symmetric complex normal with E|z|^2 = 1.
  std::complex<double> cgaussian() {
    double a, b;
    gaussian_pair(a, b);
    return {a * std::numbers::sqrt2 / 2.0, b * std::numbers::sqrt2 / 2.0};
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace bimce
