#pragma once

// SPDX-License-Identifier: Apache-2.0

// Bit-compatible port of CPython's `random.Random(seed).shuffle(list)`:
// MT19937 seeded through init_by_array with the 32-bit words of |seed|, and
// index selection through getrandbits() rejection sampling. Lets split
// manifests match ones produced by a Python pipeline with the same seed.

#include <algorithm>
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace los {

class PyRandom {
 public:
  explicit PyRandom(std::uint64_t seed) { seed_with(seed); }

  std::uint32_t next_u32() {
    if (index_ >= kN) twist();
    std::uint32_t y = state_[index_++];
    y ^= y >> 11;
    y ^= (y << 7) & 0x9d2c5680u;
    y ^= (y << 15) & 0xefc60000u;
    y ^= y >> 18;
    return y;
  }

  /// getrandbits(k) for 1 <= k <= 32.
  std::uint32_t getrandbits(int k) { return next_u32() >> (32 - k); }

  /// Uniform integer in [0, n), n >= 1 and n < 2^32.
  std::uint32_t randbelow(std::uint32_t n) {
    int k = 0;
    while (k < 32 && (std::uint64_t{1} << k) <= n) ++k;  // n.bit_length()
    std::uint32_t r = getrandbits(k);
    while (r >= n) r = getrandbits(k);
    return r;
  }

  template <class T>
  void shuffle(std::vector<T>& x) {
    for (std::size_t i = x.size(); i-- > 1;) {
      const std::size_t j = randbelow(static_cast<std::uint32_t>(i + 1));
      std::swap(x[i], x[j]);
    }
  }

 private:
  static constexpr std::size_t kN = 624, kM = 397;

  void init_genrand(std::uint32_t s) {
    state_[0] = s;
    for (std::size_t i = 1; i < kN; ++i)
      state_[i] = 1812433253u * (state_[i - 1] ^ (state_[i - 1] >> 30)) + static_cast<std::uint32_t>(i);
    index_ = kN;
  }

  void seed_with(std::uint64_t seed) {
    std::vector<std::uint32_t> key;
    do {
      key.push_back(static_cast<std::uint32_t>(seed & 0xffffffffu));
      seed >>= 32;
    } while (seed != 0);

    init_genrand(19650218u);
    std::size_t i = 1, j = 0;
    for (std::size_t k = std::max(kN, key.size()); k > 0; --k) {
      state_[i] = (state_[i] ^ ((state_[i - 1] ^ (state_[i - 1] >> 30)) * 1664525u)) + key[j] +
                  static_cast<std::uint32_t>(j);
      ++i;
      ++j;
      if (i >= kN) {
        state_[0] = state_[kN - 1];
        i = 1;
      }
      if (j >= key.size()) j = 0;
    }
    for (std::size_t k = kN - 1; k > 0; --k) {
      state_[i] = (state_[i] ^ ((state_[i - 1] ^ (state_[i - 1] >> 30)) * 1566083941u)) -
                  static_cast<std::uint32_t>(i);
      ++i;
      if (i >= kN) {
        state_[0] = state_[kN - 1];
        i = 1;
      }
    }
    state_[0] = 0x80000000u;
    index_ = kN;
  }

  void twist() {
    for (std::size_t k = 0; k < kN; ++k) {
      const std::uint32_t y = (state_[k] & 0x80000000u) | (state_[(k + 1) % kN] & 0x7fffffffu);
      state_[k] = state_[(k + kM) % kN] ^ (y >> 1) ^ ((y & 1u) ? 0x9908b0dfu : 0u);
    }
    index_ = 0;
  }

  std::array<std::uint32_t, kN> state_{};
  std::size_t index_ = kN;
};

}  // namespace los
