#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include "p2c/tensor.hpp"

namespace p2c {

// Seeded generator owned by exactly one run (or one purpose within a run).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream keyed by (master seed, index, purpose).
  static Rng derive(std::uint64_t master, std::uint64_t index, std::string_view purpose);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::size_t categorical(std::span<const double> weights);
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  // Tensor of i.i.d. N(0, std^2) entries, filled in row-major order.
  Tensor normal_tensor(Shape shape, double std = 1.0);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace p2c
