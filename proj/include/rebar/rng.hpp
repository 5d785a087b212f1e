#pragma once

#include <cstdint>
#include <random>

namespace rebar {

// splitmix64 finalizer; used to derive decorrelated stream seeds from one
// master seed so that parallel workers never share an engine.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(mix_seed(mix_seed(seed) + stream));
}

// Partial Fisher-Yates: returns k distinct values from 0..n-1.
template <typename Rng>
std::vector<int> sample_without_replacement(int n, int k, Rng& rng) {
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace rebar
