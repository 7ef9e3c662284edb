#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gbs {

// splitmix64 finalizer; used to derive independent stream seeds from counters.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based seed derivation: derive_seed(base, {trial, method, budget}).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> counters) noexcept {
  std::uint64_t h = mix64(base);
  for (auto c : counters) h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

// Thin wrapper around mt19937_64 so every module draws from the same primitives.
class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Uniform on the open interval (0, 1); never returns 0 or 1.
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal(double mean = 0.0, double sd = 1.0) {
    return mean + sd * std::normal_distribution<double>(0.0, 1.0)(engine_);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  std::uint64_t next() { return engine_(); }

  engine_type& engine() { return engine_; }

 private:
  engine_type engine_;
};

}  // namespace gbs
