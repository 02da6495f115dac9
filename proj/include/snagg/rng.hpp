#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace snagg {

/// Seeded generator with portable conversions.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Uniform, normal and integer draws are derived from raw engine
/// words here rather than through <random> distributions, whose algorithms
/// are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent sub-stream keyed by (seed, stream name, index).
  static Rng derive(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace snagg
