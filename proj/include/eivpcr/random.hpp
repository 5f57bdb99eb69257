#pragma once

// Counter-based random streams. Every value is a pure function of
// (key, position), and keys are derived from (master seed, trial, role), so
// trials can run in any order or in parallel and still see the same data.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace eivpcr {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t master, std::uint64_t trial, std::uint64_t role) noexcept {
  return mix64(mix64(mix64(master) ^ trial) ^ role);
}

/// Which quantity a stream feeds. Values are part of the reproducibility
/// contract; append, never renumber.
enum class StreamRole : std::uint64_t {
  train_factors = 1,
  train_loadings = 2,
  beta = 3,
  response_noise = 4,
  train_noise = 5,
  test_noise = 6,
  train_mask = 7,
  test_mask = 8,
  test_factors = 9,
  test_loadings = 10,
  panel_weights = 11,
  panel_target_noise = 12,
  seed_list = 13,
};

class CounterStream {
 public:
  using result_type = std::uint64_t;

  explicit CounterStream(std::uint64_t key) noexcept : key_(key) {}
  CounterStream(std::uint64_t master, std::uint64_t trial, StreamRole role) noexcept
      : key_(derive_key(master, trial, static_cast<std::uint64_t>(role))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  /// Value at an absolute position; does not advance the stream.
  result_type at(std::uint64_t position) const noexcept {
    return mix64(key_ ^ mix64(position));
  }

  result_type operator()() noexcept { return at(counter_++); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; one draw consumes two counters.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  std::uint64_t position() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace eivpcr
