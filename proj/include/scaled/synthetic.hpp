#pragma once

// Procedural test content: smooth shading, a few hard-edged shapes, oriented
// texture and mild grain, panning over time. Deterministic per seed and
// quantized to 8 bits so it behaves like decoded camera footage.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "scaled/frame.hpp"
#include "scaled/media_io.hpp"
#include "scaled/rng.hpp"

namespace scaled {

namespace detail {

struct Shape2d {
  double cx, cy, rx, ry, angle;
  double y, u, v;
  bool disc;
};

struct Wave {
  double fx, fy, phase, amp;
};

struct SceneDesc {
  std::vector<Shape2d> shapes;
  std::vector<Wave> waves;
  double vx, vy;
  double gx, gy, base;
  double grain;
};

inline SceneDesc make_scene(std::size_t w, std::size_t h, std::uint64_t seed) {
  CounterRng rng(seed, 0x7363656eULL);
  SceneDesc s;
  s.base = rng.uniform(0.3, 0.6);
  s.gx = rng.uniform(-0.25, 0.25) / static_cast<double>(w);
  s.gy = rng.uniform(-0.25, 0.25) / static_cast<double>(h);
  s.vx = rng.uniform(-1.5, 1.5);
  s.vy = rng.uniform(-1.0, 1.0);
  s.grain = rng.uniform(0.004, 0.012);
  const double span = static_cast<double>(std::max(w, h));
  const std::size_t n_shapes = 3 + rng.below(5);
  for (std::size_t i = 0; i < n_shapes; ++i) {
    Shape2d sh{};
    sh.cx = rng.uniform(0, static_cast<double>(w));
    sh.cy = rng.uniform(0, static_cast<double>(h));
    sh.rx = rng.uniform(0.05, 0.3) * span;
    sh.ry = rng.uniform(0.05, 0.3) * span;
    sh.angle = rng.uniform(0, std::numbers::pi);
    sh.y = rng.uniform(-0.3, 0.3);
    sh.u = rng.uniform(-0.15, 0.15);
    sh.v = rng.uniform(-0.15, 0.15);
    sh.disc = rng.below(2) == 0;
    s.shapes.push_back(sh);
  }
  const std::size_t n_waves = 4 + rng.below(4);
  for (std::size_t i = 0; i < n_waves; ++i) {
    const double period = rng.uniform(3.0, 40.0);
    const double dir = rng.uniform(0, 2 * std::numbers::pi);
    s.waves.push_back({std::cos(dir) / period, std::sin(dir) / period, rng.uniform(0, 2 * std::numbers::pi),
                       rng.uniform(0.01, 0.06) * (period > 10 ? 1.0 : 0.5)});
  }
  return s;
}

inline double hash_noise(std::uint64_t seed, std::int64_t x, std::int64_t y) {
  std::uint64_t z = seed ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL) ^
                    (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53 - 0.5;
}

}  // namespace detail

/// Frame `t` of the synthetic sequence for `seed`, 4:4:4.
inline FramePlanar synthetic_frame(std::size_t width, std::size_t height, std::uint64_t seed, std::size_t t = 0) {
  const auto s = detail::make_scene(width, height, seed);
  FramePlanar f(width, height, ChromaLayout::k444);
  const double dx = s.vx * static_cast<double>(t), dy = s.vy * static_cast<double>(t);
  for (std::size_t yy = 0; yy < height; ++yy) {
    for (std::size_t xx = 0; xx < width; ++xx) {
      const double x = static_cast<double>(xx) + dx, y = static_cast<double>(yy) + dy;
      double lum = s.base + s.gx * x + s.gy * y, cu = 0.5, cv = 0.5;
      for (const auto& w : s.waves) lum += w.amp * std::sin(2 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
      cu += 0.05 * std::sin(x * 0.02 + s.base * 7);
      cv += 0.05 * std::cos(y * 0.03 - s.base * 5);
      for (const auto& sh : s.shapes) {
        const double c = std::cos(sh.angle), sn = std::sin(sh.angle);
        const double px = (x - sh.cx) * c + (y - sh.cy) * sn, py = -(x - sh.cx) * sn + (y - sh.cy) * c;
        const double d = sh.disc ? std::hypot(px / sh.rx, py / sh.ry) : std::max(std::abs(px) / sh.rx, std::abs(py) / sh.ry);
        // About one pixel of edge softness.
        const double edge = 1.0 / (1.0 + std::exp((d - 1.0) * std::min(sh.rx, sh.ry) * 2.0));
        lum += sh.y * edge;
        cu += sh.u * edge;
        cv += sh.v * edge;
      }
      const auto ix = static_cast<std::int64_t>(std::floor(x)), iy = static_cast<std::int64_t>(std::floor(y));
      lum += s.grain * 2 * detail::hash_noise(seed, ix, iy);
      f.y.at(xx, yy) = static_cast<float>(lum);
      f.u.at(xx, yy) = static_cast<float>(cu);
      f.v.at(xx, yy) = static_cast<float>(cv);
    }
  }
  return quantize_8bit(f);
}

inline std::vector<FramePlanar> synthetic_sequence(std::size_t width, std::size_t height, std::size_t frames,
                                                   std::uint64_t seed) {
  std::vector<FramePlanar> out;
  out.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) out.push_back(synthetic_frame(width, height, seed, t));
  return out;
}

/// Independent natural-looking patches, one scene per index.
inline std::vector<FramePlanar> synthetic_patches(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::vector<FramePlanar> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_frame(size, size, seed * 1000003ULL + i));
  return out;
}

}  // namespace scaled
