#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace musel {

/// Seeded pseudo-random stream with platform-stable draws.
///
/// The standard distributions are implementation-defined, so uniforms and
/// normals are derived directly from the raw 64-bit engine output. Streams for
/// different purposes are split from one run seed by a fixed label.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);
  RngStream(std::uint64_t seed, std::string_view label);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::size_t uniform_index(std::size_t n);
  /// Standard normal (Box-Muller, no cached second value).
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// 64-bit FNV-1a. Stable across platforms; used for stream labels and cache keys.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace musel
