#pragma once

#include <cstdint>
#include <initializer_list>

namespace enfode {

/// Counter-splittable PRNG (xoshiro256** seeded through splitmix64).
/// Streams are derived from a root seed plus a path of stream ids, so
/// per-trajectory / per-step generators are independent of evaluation
/// order. uniform/normal are implemented here (not via <random>
/// distributions) so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  /// Child generator for (seed, path...). Deterministic, order-free.
  static Rng stream(uint64_t seed, std::initializer_list<uint64_t> path);

  uint64_t next_u64();
  double uniform();                          // [0,1)
  double uniform(double lo, double hi);      // [lo,hi)
  double normal();                           // N(0,1), Box-Muller
  int64_t uniform_int(int64_t n);            // [0,n), unbiased

 private:
  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace enfode
