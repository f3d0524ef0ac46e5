#pragma once

#include "umsd/common.hpp"

#include <initializer_list>
#include <random>

namespace umsd {

// Seeded random source. The engine is std::mt19937_64; the uniform and normal
// conversions are implemented here so results do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  double normal();

  Matrix normal_matrix(Index rows, Index cols);

  /// Deterministic child seed from a parent seed and a path of integers.
  static std::uint64_t derive(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> path);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace umsd
