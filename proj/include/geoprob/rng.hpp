#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <vector>

namespace geoprob {

/// Identifies one independent random stream: a master seed plus a path of
/// integers (typically [replicate, purpose, ...]).
struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> stream_path;

  SeedSpec child(std::uint64_t index) const {
    SeedSpec s = *this;
    s.stream_path.push_back(index);
    return s;
  }
  SeedSpec child(std::initializer_list<std::uint64_t> indices) const {
    SeedSpec s = *this;
    s.stream_path.insert(s.stream_path.end(), indices);
    return s;
  }
  bool operator==(const SeedSpec&) const = default;
};

// Sub-purpose indices used when splitting a replicate stream.
namespace purpose {
inline constexpr std::uint64_t kPositions = 0;
inline constexpr std::uint64_t kMarks = 1;
inline constexpr std::uint64_t kScoring = 2;
inline constexpr std::uint64_t kInsertion = 3;
inline constexpr std::uint64_t kCalibration = 4;
inline constexpr std::uint64_t kAuxiliary = 5;
}  // namespace purpose

std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256** keyed by a hash of the SeedSpec. Satisfies
/// UniformRandomBitGenerator so std distributions can drive it.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(const SeedSpec& seed);
  explicit Rng(std::uint64_t seed) : Rng(SeedSpec{seed, {}}) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard exponential.
  double exponential();
  double normal();
  std::uint64_t poisson(double mean);

 private:
  std::uint64_t s_[4];
};

}  // namespace geoprob
