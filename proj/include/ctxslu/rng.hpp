#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace ctxslu {

// Seeded RNG stream. mt19937_64 output is fully specified by the standard and
// the [0,1) mapping below avoids std::uniform_real_distribution (whose
// algorithm is implementation-defined), so equal seeds give equal streams.
class RngState {
 public:
  explicit RngState(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), n > 0
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  // Fisher-Yates; stable across platforms unlike std::shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(i + 1))]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace ctxslu
