#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace bcp {

// Error kinds. Every failure the library reports is one of these.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {  // invalid-config
  using Error::Error;
};
struct InputError : Error {  // invalid-input
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ContractError : Error {  // contract-violation
  using Error::Error;
};
struct EmptyTargetError : Error {  // empty-target-class
  using Error::Error;
};

/// Seeded generator used everywhere randomness is needed.
///
/// The engine is std::mt19937_64 (its output sequence is fixed by the
/// standard). The standard distributions are implementation-defined, so the
/// few we need are derived from raw engine bits here to keep every seeded
/// artifact identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InputError("Rng::below: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  /// Standard normal via Box-Muller (one draw per call; the pair's second
  /// value is discarded so the stream position is simple to reason about).
  double normal(double mean, double stddev);

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with a stream tag so independent consumers of one
/// user-facing seed do not share a sequence.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace bcp
