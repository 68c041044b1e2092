#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every draw is a
// pure function of (key, counter), so paths can be generated in any order on
// any number of workers and still reproduce bit-for-bit.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mscore {

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  explicit Philox4x32(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  Counter operator()(Counter ctr) const {
    Key key = key_;
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  Key key_;
};

/// Independent random streams inside one seed.
enum class Stream : std::uint32_t { kBrownian = 1, kReverseTerminal = 2, kReverseNoise = 3, kSynthetic = 4 };

/// Two standard normals for (stream, index, step, block), via Box-Muller on 53-bit uniforms.
inline std::array<double, 2> normal_pair(const Philox4x32& gen, Stream stream, std::uint64_t index,
                                         std::uint32_t step, std::uint32_t block) {
  const auto r = gen({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), step,
                      (static_cast<std::uint32_t>(stream) << 24) | block});
  const std::uint64_t a = (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
  const std::uint64_t b = (static_cast<std::uint64_t>(r[2]) << 32) | r[3];
  constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * kScale;  // (0, 1]
  const double u2 = static_cast<double>(b >> 11) * kScale;          // [0, 1)
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

/// Fills `count` standard normals for one (stream, index, step).
template <typename Out>
void fill_normals(const Philox4x32& gen, Stream stream, std::uint64_t index, std::uint32_t step, int count, Out&& out) {
  for (int k = 0; k < count; k += 2) {
    const auto z = normal_pair(gen, stream, index, step, static_cast<std::uint32_t>(k / 2));
    out(k, z[0]);
    if (k + 1 < count) out(k + 1, z[1]);
  }
}

}  // namespace mscore
