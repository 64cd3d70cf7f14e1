// Copyright 2026 The repsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace repsim {

/// Order-preserving map from a non-NaN float to an unsigned key:
/// a < b  <=>  float_key(a) < float_key(b), and a == b <=> keys equal
/// (-0.0 is folded onto +0.0).
inline std::uint32_t float_key(float v) noexcept {
  if (v == 0.0f) v = 0.0f;
  const auto bits = std::bit_cast<std::uint32_t>(v);
  return (bits & 0x80000000u) ? ~bits : (bits | 0x80000000u);
}

inline float key_float(std::uint32_t key) noexcept {
  const std::uint32_t bits = (key & 0x80000000u) ? (key & 0x7fffffffu) : ~key;
  return std::bit_cast<float>(bits);
}

namespace detail {

constexpr unsigned kRadixBits = 11;
constexpr std::size_t kRadixBuckets = std::size_t(1) << kRadixBits;

// Stable LSD radix sort of `items` on bits [lo_bit, hi_bit) of each item.
template <typename T>
void lsd_radix_sort(std::vector<T>& items, unsigned lo_bit, unsigned hi_bit) {
  const std::size_t n = items.size();
  if (n < 2) return;
  std::vector<T> scratch(n);
  T* src = items.data();
  T* dst = scratch.data();
  for (unsigned shift = lo_bit; shift < hi_bit; shift += kRadixBits) {
    const unsigned width = std::min(kRadixBits, hi_bit - shift);
    const T mask = (T(1) << width) - 1;
    std::array<std::size_t, kRadixBuckets> count{};
    for (std::size_t i = 0; i < n; ++i) ++count[(src[i] >> shift) & mask];
    // A digit shared by every item leaves the order unchanged.
    if (count[(src[0] >> shift) & mask] == n) continue;
    std::size_t running = 0;
    for (auto& c : count) {
      const std::size_t c0 = c;
      c = running;
      running += c0;
    }
    for (std::size_t i = 0; i < n; ++i) dst[count[(src[i] >> shift) & mask]++] = src[i];
    std::swap(src, dst);
  }
  if (src != items.data()) items.swap(scratch);
}

}  // namespace detail

/// Ascending keys of `values`; comparisons between the returned keys agree
/// with float comparisons between the inputs.
inline std::vector<std::uint32_t> sorted_float_keys(std::span<const float> values) {
  std::vector<std::uint32_t> keys(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) keys[i] = float_key(values[i]);
  detail::lsd_radix_sort(keys, 0, 32);
  return keys;
}

/// Stable argsort packed as (float_key << 32 | index), sorted by value and
/// then by index. Supports up to 2^32 elements.
inline std::vector<std::uint64_t> packed_argsort(std::span<const float> values) {
  std::vector<std::uint64_t> packed(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    packed[i] = (std::uint64_t(float_key(values[i])) << 32) | std::uint64_t(i);
  }
  // Indices are already ascending, so a stable sort on the high word suffices.
  detail::lsd_radix_sort(packed, 32, 64);
  return packed;
}

}  // namespace repsim
