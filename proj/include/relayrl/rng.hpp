#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace relayrl {

// splitmix64 step; advances x and returns a mixed output.
inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds a base seed and a list of stream tags into one well-mixed seed.
// Used everywhere a component needs its own deterministic stream derived
// from the run's master seed (per-episode, per-relay, per-run, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t state = base;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t t : tags) {
    state ^= t * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL;
    out = splitmix64(state);
  }
  return out;
}

// mt19937_64 with explicit output mappings. The mappings are spelled out
// (rather than std::uniform_real_distribution etc.) so that sampled values
// are a function of the seed alone, not of the standard library version;
// trace/CSV byte-equality contracts depend on that.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n). 128-bit multiply keeps the mapping exact up to O(n/2^64) bias.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(eng_()) * static_cast<unsigned __int128>(n)) >> 64);
  }

  // Box-Muller with cached spare.
  double normal(double mean = 0.0, double sd = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + sd * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mean + sd * r * std::cos(a);
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace relayrl
