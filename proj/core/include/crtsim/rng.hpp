#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace crtsim {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// A stream is fully determined by its 64-bit key and 64-bit stream id; the
/// block counter advances with use. Substreams for independent work items
/// are derived by hashing a path of integers (master seed, scenario, rep,
/// purpose), so results never depend on which thread runs which item.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t key, std::uint64_t stream_id) noexcept;

  /// Stream keyed by hashing `path`. Distinct paths give unrelated streams.
  static Stream derive(std::initializer_list<std::uint64_t> path) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Raw block function; exposed for known-answer tests.
  static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr,
                                             std::array<std::uint32_t, 2> key) noexcept;

 private:
  void refill() noexcept;

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> ctr_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
};

/// Tags separating the random streams consumed by each pipeline stage.
enum class Purpose : std::uint64_t {
  kCensus = 0x43454e53,
  kPool = 0x504f4f4c,
  kDraw = 0x44524157,
  kDgm = 0x44474d00,
};

constexpr std::uint64_t tag(Purpose p) noexcept {
  return static_cast<std::uint64_t>(p);
}

/// splitmix64 finalizer; the mixing step used for key derivation.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace crtsim
