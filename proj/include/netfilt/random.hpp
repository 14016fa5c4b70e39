#pragma once

#include <cstdint>
#include <random>

namespace netfilt {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser. Bijective, so distinct inputs never collide.
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based split of a master seed: stream `index` gets its own generator,
/// independent of the order in which streams are created.
inline Rng derive_stream(std::uint64_t master_seed, std::uint64_t index) {
  const std::uint64_t a = splitmix64(master_seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

/// Uniform double in [0, 1) built from the top 53 bits; identical on every standard library.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace netfilt
