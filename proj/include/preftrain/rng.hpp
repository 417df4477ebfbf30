#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "preftrain/common.hpp"

namespace preftrain {

// Deterministic random stream. mt19937_64 output is fully specified by the
// standard; uniform/normal conversion is done by hand because the
// std::*_distribution algorithms are implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  // Independent stream keyed by (master seed, label, index). Parallel and
  // serial execution over the same keys draw identical values.
  static RngStream derive(std::uint64_t master, std::string_view label, std::uint64_t index) {
    return RngStream(hash_combine(hash_combine(master, fnv1a(label)), hash_mix(index)));
  }

  std::uint64_t bits() { return gen_(); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe as a log argument.
  double uniform_pos() { return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53; }

  // Box-Muller pair of independent standard normals.
  Vec2 normal2() {
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    return {r * std::cos(a), r * std::sin(a)};
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    Vec2 z = normal2();
    spare_ = z.y;
    have_spare_ = true;
    return z.x;
  }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return gen_() % n; }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace preftrain
