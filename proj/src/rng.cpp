#include "rng.hpp"

#include <sstream>

#include "common.hpp"

namespace cfasl {

int64_t Rng::below(int64_t n) {
  CFASL_CHECK_ARG(n > 0, "Rng::below requires n > 0");
  // Rejection sampling to avoid modulo bias.
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

std::vector<int64_t> Rng::permutation(int64_t n) {
  std::vector<int64_t> p(n);
  for (int64_t i = 0; i < n; ++i) p[i] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    int64_t j = below(i + 1);
    std::swap(p[i], p[j]);
  }
  return p;
}

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
  CFASL_CHECK_ARG(k >= 0 && k <= n, "sample_without_replacement: k out of range");
  std::vector<int64_t> pool(n);
  for (int64_t i = 0; i < n; ++i) pool[i] = i;
  for (int64_t i = 0; i < k; ++i) {
    int64_t j = i + below(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (is.fail()) throw_io("invalid RNG state string");
}

}  // namespace cfasl
