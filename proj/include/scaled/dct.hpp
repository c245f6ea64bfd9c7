#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>

namespace scaled::dct {

inline constexpr std::size_t kBlock = 8;

/// Orthonormal DCT-II basis: basis()[u][x] = c(u) cos((2x+1) u pi / 16).
inline const std::array<std::array<double, kBlock>, kBlock>& basis() {
  static const auto table = [] {
    std::array<std::array<double, kBlock>, kBlock> b{};
    for (std::size_t u = 0; u < kBlock; ++u) {
      const double c = u == 0 ? std::sqrt(1.0 / kBlock) : std::sqrt(2.0 / kBlock);
      for (std::size_t x = 0; x < kBlock; ++x)
        b[u][x] = c * std::cos((2.0 * static_cast<double>(x) + 1.0) * static_cast<double>(u) * std::numbers::pi /
                               (2.0 * kBlock));
    }
    return b;
  }();
  return table;
}

/// Forward 2-D transform of one block. `in` and `out` are 8x8 row-major with
/// independent strides.
template <class T>
void forward(const T* in, std::size_t in_stride, T* out, std::size_t out_stride) {
  const auto& b = basis();
  T tmp[kBlock][kBlock];
  for (std::size_t y = 0; y < kBlock; ++y)
    for (std::size_t v = 0; v < kBlock; ++v) {
      T acc{0};
      for (std::size_t x = 0; x < kBlock; ++x) acc += static_cast<T>(b[v][x]) * in[y * in_stride + x];
      tmp[y][v] = acc;
    }
  for (std::size_t u = 0; u < kBlock; ++u)
    for (std::size_t v = 0; v < kBlock; ++v) {
      T acc{0};
      for (std::size_t y = 0; y < kBlock; ++y) acc += static_cast<T>(b[u][y]) * tmp[y][v];
      out[u * out_stride + v] = acc;
    }
}

/// Inverse (transpose) of forward().
template <class T>
void inverse(const T* in, std::size_t in_stride, T* out, std::size_t out_stride) {
  const auto& b = basis();
  T tmp[kBlock][kBlock];
  for (std::size_t u = 0; u < kBlock; ++u)
    for (std::size_t x = 0; x < kBlock; ++x) {
      T acc{0};
      for (std::size_t v = 0; v < kBlock; ++v) acc += static_cast<T>(b[v][x]) * in[u * in_stride + v];
      tmp[u][x] = acc;
    }
  for (std::size_t y = 0; y < kBlock; ++y)
    for (std::size_t x = 0; x < kBlock; ++x) {
      T acc{0};
      for (std::size_t u = 0; u < kBlock; ++u) acc += static_cast<T>(b[u][y]) * tmp[u][x];
      out[y * out_stride + x] = acc;
    }
}

/// Zigzag scan order: zigzag()[k] is the row-major index of the k-th coefficient.
inline const std::array<std::size_t, kBlock * kBlock>& zigzag() {
  static const auto order = [] {
    std::array<std::size_t, kBlock * kBlock> z{};
    std::size_t k = 0;
    for (std::size_t s = 0; s < 2 * kBlock - 1; ++s) {
      for (std::size_t i = 0; i <= s; ++i) {
        const std::size_t r = (s % 2 == 0) ? s - i : i;
        const std::size_t c = s - r;
        if (r < kBlock && c < kBlock) z[k++] = r * kBlock + c;
      }
    }
    return z;
  }();
  return order;
}

}  // namespace scaled::dct
