#include "p2c/rng.hpp"

#include <vector>

namespace p2c {

Rng Rng::derive(std::uint64_t master, std::uint64_t index, std::string_view purpose) {
  // FNV-1a over the purpose tag keeps streams for different purposes apart.
  std::uint64_t tag = 1469598103934665603ULL;
  for (unsigned char ch : purpose) {
    tag ^= ch;
    tag *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  std::uint64_t words[2];
  std::uint32_t raw[4];
  seq.generate(raw, raw + 4);
  words[0] = (static_cast<std::uint64_t>(raw[0]) << 32) | raw[1];
  words[1] = (static_cast<std::uint64_t>(raw[2]) << 32) | raw[3];
  return Rng(words[0] ^ (words[1] * 0x9E3779B97F4A7C15ULL));
}

std::size_t Rng::categorical(std::span<const double> weights) {
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return dist(engine_);
}

std::size_t Rng::below(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

Tensor Rng::normal_tensor(Shape shape, double std) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = std * normal();
  return t;
}

}  // namespace p2c
