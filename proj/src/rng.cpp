#include "geoprob/rng.hpp"

#include <cmath>
#include <random>

namespace geoprob {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

std::uint64_t mix_path(const SeedSpec& seed) {
  std::uint64_t state = seed.master_seed;
  std::uint64_t key = splitmix64(state);
  for (std::uint64_t step : seed.stream_path) {
    std::uint64_t s = key ^ (step + 0x632be59bd9b4e019ULL);
    key = splitmix64(s) ^ rotl(key, 17);
    s = key;
    key = splitmix64(s);
  }
  // Path length participates so [] and [0] differ.
  std::uint64_t s = key + seed.stream_path.size();
  return splitmix64(s);
}

}  // namespace

Rng::Rng(const SeedSpec& seed) {
  std::uint64_t state = mix_path(seed);
  for (auto& word : s_) word = splitmix64(state);
}

Rng::result_type Rng::operator()() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::exponential() { return -std::log1p(-uniform()); }

double Rng::normal() {
  std::normal_distribution<double> dist;
  return dist(*this);
}

std::uint64_t Rng::poisson(double mean) {
  if (mean <= 0.0) return 0;
  std::poisson_distribution<std::uint64_t> dist(mean);
  return dist(*this);
}

}  // namespace geoprob
