#pragma once

#include <cstdint>
#include <initializer_list>

namespace agegan {

// splitmix64 finalizer.
constexpr uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Deterministic child seed for a (master, key...) tuple.
constexpr uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> keys) {
  uint64_t h = mix64(master);
  for (uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632BE59BD9B4E019ull));
  return h;
}

}  // namespace agegan
