#pragma once

#include <cstdint>
#include <random>

namespace drsl {

// Named sub-streams derived from the master seed. Every source of
// randomness in a run is keyed by (master seed, stream, index) so that
// resuming at an epoch boundary replays the exact same draws.
enum class RngStream : std::uint64_t {
  synth = 1,
  carve = 2,
  closed_noise = 3,
  open_noise = 4,
  model_init = 5,
  shuffle = 6,
  augment = 7,
  mixup = 8,
  proto_fallback = 9,
};

// splitmix64 finalizer; decorrelates nearby (seed, stream, index) keys.
inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream,
                              std::uint64_t index = 0) {
  std::uint64_t x = master;
  x += 0x9e3779b97f4a7c15ULL * (stream + 1);
  x += 0xbf58476d1ce4e5b9ULL * (index + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline std::mt19937_64 make_rng(std::uint64_t master, RngStream stream,
                                std::uint64_t index = 0) {
  return std::mt19937_64(
      mix_seed(master, static_cast<std::uint64_t>(stream), index));
}

// Beta(alpha, alpha) via the two-gamma construction.
inline double beta_draw(std::mt19937_64& rng, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  double a = gamma(rng);
  double b = gamma(rng);
  double s = a + b;
  if (s <= 0.0) return 0.5;
  return a / s;
}

}  // namespace drsl
