#pragma once

#include <cstdint>

namespace dpft {

// Independent randomness streams split from one root seed.
enum class SeedStream : std::uint64_t {
  scene = 1,
  camera_noise = 2,
  radar_noise = 3,
  init = 4,
  queries = 5,
  shuffle = 6,
  dropout = 7,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, SeedStream stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(root ^ (static_cast<std::uint64_t>(stream) * 0xD1B54A32D192ED03ull)) + index);
}

}  // namespace dpft
