#pragma once

// Counter-based RNG streams. Every consumer of randomness receives its own
// stream keyed by (master seed, run index, purpose, sub-index), so the set of
// draws a component sees is independent of scheduling and of which other
// components run.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>

#include "so3est/common.hpp"

namespace so3est {

enum class StreamPurpose : std::uint64_t {
  kTruthInit = 1,
  kTruthNoise = 2,
  kMeasurementNoise = 3,
  kParticleInit = 4,
  kParticleNoise = 5,
  kFilterAux = 6,
};

namespace detail {
// splitmix64; used only to whiten stream keys into engine seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace detail

/// A single random stream. Gaussians come from Box-Muller on top of
/// mt19937_64: unlike std::normal_distribution, the draw sequence is then
/// fully pinned by the standard, which the byte-identical-output contract
/// of the benchmark relies on.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}

  /// Uniform on (0, 1].
  double uniform01() {
    const std::uint64_t u = eng_();
    return (static_cast<double>(u >> 11) + 1.0) * 0x1.0p-53;
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::Vector3d gaussian3() {
    Eigen::Vector3d v;
    for (int i = 0; i < 3; ++i) v[i] = gaussian();
    return v;
  }

  Eigen::VectorXd gaussian_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Derives independent sub-streams from one master seed.
class RngFactory {
 public:
  explicit RngFactory(std::uint64_t master_seed) : master_(master_seed) {}

  RngStream stream(std::uint64_t run, StreamPurpose purpose,
                   std::uint64_t index = 0) const {
    std::uint64_t k = detail::splitmix64(master_ ^ 0x5851f42d4c957f2dull);
    k = detail::splitmix64(k ^ run);
    k = detail::splitmix64(k ^ static_cast<std::uint64_t>(purpose));
    k = detail::splitmix64(k ^ index);
    return RngStream(k);
  }

  std::uint64_t master_seed() const { return master_; }

 private:
  std::uint64_t master_;
};

}  // namespace so3est
