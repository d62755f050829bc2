#ifndef ALEA_RNG_HPP
#define ALEA_RNG_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>

namespace alea {

// SplitMix64 finalizer. Used both as a mixer for key derivation and as the
// per-draw output function of the counter-based streams below.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based random stream: the i-th draw is a pure function of
/// (key, i), so independent streams can be evaluated in any order and
/// always reproduce bit-identically.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  /// Derive a stream from a root seed and a path of subkeys. Distinct
  /// paths give decorrelated streams.
  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t key = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
    for (std::uint64_t p : path) key = splitmix64(key ^ splitmix64(p + 0xbb67ae8584caa73bULL));
    return RngStream(key);
  }

  std::uint64_t next_u64() { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++ctr_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1] (safe as a log argument).
  double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. Two uniforms per draw, no caching,
  /// so the draw count is deterministic.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Index in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

}  // namespace alea

#endif  // ALEA_RNG_HPP
