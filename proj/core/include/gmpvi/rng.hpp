#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace gmpvi {

/// Independent purposes that draw random numbers. Each gets its own stream
/// derived from the user seed, so adding draws in one place never shifts
/// another.
enum class Stream : std::uint64_t {
  initialization = 1,
  sampling = 2,
  bayes_opt = 3,
  simulation = 4,
  split = 5,
  minibatch = 6,
  oracle = 7,
};

/// 64-bit Mersenne twister keyed by (seed, stream) through splitmix64.
/// Normal and uniform variates are produced here rather than through
/// std distributions so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, Stream stream = Stream::sampling,
               std::uint64_t substream = 0);

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Marsaglia polar method).
  double normal();
  /// Integer uniform on [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Index drawn with probability proportional to `weights`.
  std::size_t categorical(std::span<const double> weights);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace gmpvi
