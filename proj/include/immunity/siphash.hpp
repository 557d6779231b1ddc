#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace immunity {

// SipHash-2-4 with 64-bit output over an arbitrary byte message.
class SipHash24 {
 public:
  static std::uint64_t hash(std::uint64_t k0, std::uint64_t k1, std::span<const std::uint8_t> msg) {
    std::uint64_t v0 = 0x736f6d6570736575ull ^ k0;
    std::uint64_t v1 = 0x646f72616e646f6dull ^ k1;
    std::uint64_t v2 = 0x6c7967656e657261ull ^ k0;
    std::uint64_t v3 = 0x7465646279746573ull ^ k1;

    const std::size_t n = msg.size();
    const std::size_t blocks = n / 8;
    for (std::size_t i = 0; i < blocks; ++i) {
      std::uint64_t m = load_le(msg.data() + 8 * i, 8);
      v3 ^= m;
      round(v0, v1, v2, v3);
      round(v0, v1, v2, v3);
      v0 ^= m;
    }
    std::uint64_t last = load_le(msg.data() + 8 * blocks, n % 8) | (std::uint64_t(n & 0xff) << 56);
    v3 ^= last;
    round(v0, v1, v2, v3);
    round(v0, v1, v2, v3);
    v0 ^= last;

    v2 ^= 0xff;
    for (int i = 0; i < 4; ++i) round(v0, v1, v2, v3);
    return v0 ^ v1 ^ v2 ^ v3;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int b) { return (x << b) | (x >> (64 - b)); }

  static std::uint64_t load_le(const std::uint8_t* p, std::size_t len) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < len; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
  }

  static void round(std::uint64_t& v0, std::uint64_t& v1, std::uint64_t& v2, std::uint64_t& v3) {
    v0 += v1;
    v1 = rotl(v1, 13);
    v1 ^= v0;
    v0 = rotl(v0, 32);
    v2 += v3;
    v3 = rotl(v3, 16);
    v3 ^= v2;
    v0 += v3;
    v3 = rotl(v3, 21);
    v3 ^= v0;
    v2 += v1;
    v1 = rotl(v1, 17);
    v1 ^= v2;
    v2 = rotl(v2, 32);
  }
};

}  // namespace immunity
