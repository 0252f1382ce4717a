#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace cfasl {

/// Deterministic random stream. The engine is std::mt19937_64 (fully
/// specified by the standard); all derived distributions are implemented
/// here rather than via std:: distributions, whose output is
/// implementation-defined. This keeps runs reproducible across compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in (0, 1]; safe as a log() argument.
  double uniform_pos() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cosine branch). Two draws per call,
  /// no cached state, so the draw count per call is fixed.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Standard Gumbel(0,1) sample: -log(-log(U)).
  double gumbel() { return -std::log(-std::log(uniform_pos())); }

  /// Uniform integer in [0, n).
  int64_t below(int64_t n);

  /// Fisher-Yates shuffle producing a permutation of 0..n-1.
  std::vector<int64_t> permutation(int64_t n);

  /// k distinct indices drawn uniformly from [0, n) (partial Fisher-Yates).
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);

  /// Engine state as text; format matches operator<< of std::mt19937_64.
  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace cfasl
