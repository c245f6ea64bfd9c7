#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "scaled/error.hpp"
#include "scaled/tensor.hpp"

namespace scaled {

enum class ChromaLayout { k420, k444 };

inline std::string to_string(ChromaLayout layout) { return layout == ChromaLayout::k420 ? "420" : "444"; }

/// One image plane of float samples, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> samples;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), samples(w * h, fill) {}

  float& at(std::size_t x, std::size_t y) { return samples[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return samples[y * width + x]; }

  bool operator==(const Plane&) const = default;
};

/// One video frame: three planes in [0, 1] and the chroma layout they follow.
struct FramePlanar {
  Plane y, u, v;
  ChromaLayout layout = ChromaLayout::k444;

  FramePlanar() = default;

  FramePlanar(std::size_t width, std::size_t height, ChromaLayout lay, float luma = 0.0f, float chroma = 0.5f)
      : layout(lay) {
    if (lay == ChromaLayout::k420 && (width % 2 || height % 2)) {
      throw ShapeError("4:2:0 frames need even dimensions, got " + std::to_string(width) + "x" +
                       std::to_string(height));
    }
    const std::size_t cw = lay == ChromaLayout::k420 ? width / 2 : width;
    const std::size_t ch = lay == ChromaLayout::k420 ? height / 2 : height;
    y = Plane(width, height, luma);
    u = Plane(cw, ch, chroma);
    v = Plane(cw, ch, chroma);
  }

  std::size_t width() const { return y.width; }
  std::size_t height() const { return y.height; }

  Plane& plane(std::size_t i) { return i == 0 ? y : (i == 1 ? u : v); }
  const Plane& plane(std::size_t i) const { return i == 0 ? y : (i == 1 ? u : v); }

  bool operator==(const FramePlanar&) const = default;
};

/// Stacks 4:4:4 frames into an N x 3 x H x W tensor.
template <class T>
Tensor<T> frames_to_tensor(const std::vector<FramePlanar>& frames) {
  if (frames.empty()) throw ShapeError("frames_to_tensor: no frames");
  const std::size_t h = frames[0].height(), w = frames[0].width();
  std::vector<T> data;
  data.reserve(frames.size() * 3 * h * w);
  for (const auto& f : frames) {
    if (f.layout != ChromaLayout::k444) throw ShapeError("frames_to_tensor expects 4:4:4 frames");
    if (f.width() != w || f.height() != h) throw ShapeError("frames_to_tensor: frames differ in size");
    for (std::size_t p = 0; p < 3; ++p) data.insert(data.end(), f.plane(p).samples.begin(), f.plane(p).samples.end());
  }
  return Tensor<T>(Shape{frames.size(), 3, h, w}, std::move(data));
}

/// Inverse of frames_to_tensor. Values are converted to float without clamping.
template <class T>
std::vector<FramePlanar> tensor_to_frames(const Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("tensor_to_frames expects N x 3 x H x W");
  const std::size_t n = t.dim(0), h = t.dim(2), w = t.dim(3);
  std::vector<FramePlanar> frames;
  frames.reserve(n);
  auto src = t.data();
  for (std::size_t b = 0; b < n; ++b) {
    FramePlanar f(w, h, ChromaLayout::k444);
    for (std::size_t p = 0; p < 3; ++p) {
      auto& s = f.plane(p).samples;
      for (std::size_t i = 0; i < h * w; ++i) s[i] = static_cast<float>(src[(b * 3 + p) * h * w + i]);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace scaled
