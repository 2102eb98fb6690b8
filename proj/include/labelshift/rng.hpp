// Seeded random streams.
//
// Independent streams are derived from a master seed and a path of
// indices (cell, trial, node, ...) so that results do not depend on how
// work is scheduled across threads.

#ifndef LABELSHIFT_RNG_HPP
#define LABELSHIFT_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace labelshift {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a master seed with a path of stream indices.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace labelshift

#endif  // LABELSHIFT_RNG_HPP
