#pragma once

// Separable resamplers. Every filter is expressed as a pair of sparse 1-D
// weight tables (one per axis); the differentiable ops apply the tables in
// the forward pass and their transposes in the backward pass, and the plane
// helpers used by media I/O and the sweep share the same tables.
//
// Sampling convention everywhere: align-corners=false, i.e. output sample j
// sits at source coordinate (j + 0.5) * in / out - 0.5.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "scaled/error.hpp"
#include "scaled/frame.hpp"
#include "scaled/tensor.hpp"

namespace scaled {

/// Rational resize factor num/den.
struct ScaleRatio {
  std::size_t num = 1;
  std::size_t den = 1;

  ScaleRatio() = default;
  ScaleRatio(std::size_t n, std::size_t d) : num(n), den(d) {
    if (n == 0 || d == 0) throw DomainError("scale ratio terms must be positive");
    const std::size_t g = std::gcd(n, d);
    num /= g;
    den /= g;
  }

  static ScaleRatio parse(const std::string& text) {
    const auto slash = text.find('/');
    try {
      if (slash == std::string::npos) return ScaleRatio(std::stoul(text), 1);
      return ScaleRatio(std::stoul(text.substr(0, slash)), std::stoul(text.substr(slash + 1)));
    } catch (const std::logic_error&) {
      throw DomainError("malformed scale ratio '" + text + "'");
    }
  }

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }

  /// floor(n * s) rounded down to even; throws when the result is below 2.
  std::size_t scaled_dim(std::size_t n) const {
    const std::size_t d = (n * num / den) & ~std::size_t{1};
    if (d < 2) {
      throw ShapeError("scale " + str() + " maps dimension " + std::to_string(n) + " below 2 pixels");
    }
    return d;
  }

  bool operator==(const ScaleRatio&) const = default;
  auto operator<=>(const ScaleRatio& o) const { return num * o.den <=> o.num * den; }
};

inline std::vector<ScaleRatio> default_evaluation_scales() {
  return {{2, 3}, {1, 2}, {2, 5}, {1, 3}, {1, 4}, {1, 5}};
}

/// Sparse resampling matrix for one axis: output j reads
/// index[start[j] .. start[j+1]) with matching weights.
struct AxisWeights {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<std::size_t> start{0};
  std::vector<std::size_t> index;
  std::vector<double> weight;

  void add_tap(std::size_t i, double w) {
    index.push_back(i);
    weight.push_back(w);
  }
  void close_row() { start.push_back(index.size()); }
};

namespace kernels {

inline double keys_cubic(double x, double a = -0.5) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

inline double lanczos(double x, int lobes = 3) {
  if (std::abs(x) >= lobes) return 0.0;
  return sinc(x) * sinc(x / lobes);
}

}  // namespace kernels

namespace detail {

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<std::ptrdiff_t>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

/// Two-tap linear interpolation without anti-aliasing (PyTorch-style).
inline AxisWeights bilinear_axis(std::size_t in, std::size_t out) {
  AxisWeights aw;
  aw.in = in;
  aw.out = out;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t j = 0; j < out; ++j) {
    double src = (static_cast<double>(j) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const double f = src - static_cast<double>(i0);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    if (i1 == i0 || f == 0.0) {
      aw.add_tap(std::min(i0, in - 1), 1.0);
    } else {
      aw.add_tap(i0, 1.0 - f);
      aw.add_tap(i1, f);
    }
    aw.close_row();
  }
  return aw;
}

/// Four-tap Keys cubic interpolation with edge clamping.
inline AxisWeights bicubic_axis(std::size_t in, std::size_t out, double a = -0.5) {
  AxisWeights aw;
  aw.in = in;
  aw.out = out;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t j = 0; j < out; ++j) {
    const double src = (static_cast<double>(j) + 0.5) * ratio - 0.5;
    const double fl = std::floor(src);
    const double t = src - fl;
    const auto i0 = static_cast<std::ptrdiff_t>(fl);
    for (std::ptrdiff_t k = -1; k <= 2; ++k) {
      const double w = kernels::keys_cubic(t - static_cast<double>(k), a);
      if (w != 0.0) aw.add_tap(detail::clamp_index(i0 + k, in), w);
    }
    aw.close_row();
  }
  return aw;
}

/// Kernel stretched by the downscale factor (anti-aliased), normalized per
/// output sample, edge-clamped. Used for the Lanczos and bicubic baselines.
template <class Kernel>
AxisWeights antialiased_axis(std::size_t in, std::size_t out, double support, Kernel kernel) {
  AxisWeights aw;
  aw.in = in;
  aw.out = out;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double stretch = std::max(scale, 1.0);
  const double reach = support * stretch;
  for (std::size_t j = 0; j < out; ++j) {
    const double center = (static_cast<double>(j) + 0.5) * scale;
    const auto lo = static_cast<std::ptrdiff_t>(std::floor(center - reach));
    const auto hi = static_cast<std::ptrdiff_t>(std::ceil(center + reach));
    const std::size_t row_begin = aw.index.size();
    double total = 0.0;
    for (std::ptrdiff_t i = lo; i <= hi; ++i) {
      const double w = kernel((static_cast<double>(i) + 0.5 - center) / stretch);
      if (w == 0.0) continue;
      aw.add_tap(detail::clamp_index(i, in), w);
      total += w;
    }
    for (std::size_t k = row_begin; k < aw.weight.size(); ++k) aw.weight[k] /= total;
    aw.close_row();
  }
  return aw;
}

inline AxisWeights lanczos_axis(std::size_t in, std::size_t out, int lobes = 3) {
  return antialiased_axis(in, out, lobes, [lobes](double x) { return kernels::lanczos(x, lobes); });
}

inline AxisWeights bicubic_antialiased_axis(std::size_t in, std::size_t out) {
  return antialiased_axis(in, out, 2.0, [](double x) { return kernels::keys_cubic(x); });
}

// ---------------------------------------------------------------------------
// Applying weight tables to one H x W plane.

namespace detail {

// dst (h x ax.out) = src (h x ax.in) * A^T
template <class T>
void apply_rows(const T* src, T* dst, std::size_t h, const AxisWeights& ax) {
  for (std::size_t r = 0; r < h; ++r) {
    const T* s = src + r * ax.in;
    T* d = dst + r * ax.out;
    for (std::size_t j = 0; j < ax.out; ++j) {
      T acc{0};
      for (std::size_t k = ax.start[j]; k < ax.start[j + 1]; ++k) acc += static_cast<T>(ax.weight[k]) * s[ax.index[k]];
      d[j] = acc;
    }
  }
}

// dst (h x ax.in) += src (h x ax.out) * A
template <class T>
void apply_rows_transposed(const T* src, T* dst, std::size_t h, const AxisWeights& ax) {
  for (std::size_t r = 0; r < h; ++r) {
    const T* s = src + r * ax.out;
    T* d = dst + r * ax.in;
    for (std::size_t j = 0; j < ax.out; ++j)
      for (std::size_t k = ax.start[j]; k < ax.start[j + 1]; ++k) d[ax.index[k]] += static_cast<T>(ax.weight[k]) * s[j];
  }
}

// dst (ax.out x w) = A * src (ax.in x w)
template <class T>
void apply_cols(const T* src, T* dst, std::size_t w, const AxisWeights& ax) {
  for (std::size_t j = 0; j < ax.out; ++j) {
    T* d = dst + j * w;
    std::fill_n(d, w, T{0});
    for (std::size_t k = ax.start[j]; k < ax.start[j + 1]; ++k) {
      const T wt = static_cast<T>(ax.weight[k]);
      const T* s = src + ax.index[k] * w;
      for (std::size_t x = 0; x < w; ++x) d[x] += wt * s[x];
    }
  }
}

// dst (ax.in x w) += A^T * src (ax.out x w)
template <class T>
void apply_cols_transposed(const T* src, T* dst, std::size_t w, const AxisWeights& ax) {
  for (std::size_t j = 0; j < ax.out; ++j) {
    const T* s = src + j * w;
    for (std::size_t k = ax.start[j]; k < ax.start[j + 1]; ++k) {
      const T wt = static_cast<T>(ax.weight[k]);
      T* d = dst + ax.index[k] * w;
      for (std::size_t x = 0; x < w; ++x) d[x] += wt * s[x];
    }
  }
}

}  // namespace detail

/// Resizes one plane: horizontal pass, then vertical pass.
template <class T>
std::vector<T> resample_plane(std::span<const T> src, const AxisWeights& rows, const AxisWeights& cols) {
  if (src.size() != rows.in * cols.in) throw ShapeError("resample_plane: plane size does not match weight tables");
  std::vector<T> tmp(rows.in * cols.out), out(rows.out * cols.out);
  detail::apply_rows(src.data(), tmp.data(), rows.in, cols);
  detail::apply_cols(tmp.data(), out.data(), cols.out, rows);
  return out;
}

/// Accumulates the transpose of resample_plane applied to `grad` into `dst`.
template <class T>
void resample_plane_transposed(std::span<const T> grad, std::span<T> dst, const AxisWeights& rows,
                               const AxisWeights& cols) {
  std::vector<T> tmp(rows.in * cols.out, T{0});
  detail::apply_cols_transposed(grad.data(), tmp.data(), cols.out, rows);
  detail::apply_rows_transposed(tmp.data(), dst.data(), rows.in, cols);
}

inline Plane resample(const Plane& p, const AxisWeights& rows, const AxisWeights& cols) {
  if (p.height != rows.in || p.width != cols.in) throw ShapeError("resample: plane does not match weight tables");
  Plane out;
  out.width = cols.out;
  out.height = rows.out;
  out.samples = resample_plane<float>(p.samples, rows, cols);
  return out;
}

/// Differentiable separable resampling of every N x C plane of an NCHW tensor.
template <class T>
Tensor<T> resample2d(Tape<T>& tape, const Tensor<T>& x, AxisWeights rows, AxisWeights cols) {
  detail::require_rank(x, 4, "resample2d");
  const std::size_t planes = x.dim(0) * x.dim(1);
  if (x.dim(2) != rows.in || x.dim(3) != cols.in) throw ShapeError("resample2d: input does not match weight tables");
  const std::size_t in_sz = rows.in * cols.in, out_sz = rows.out * cols.out;
  std::vector<T> out(planes * out_sz);
  for (std::size_t p = 0; p < planes; ++p) {
    auto r = resample_plane<T>(x.data().subspan(p * in_sz, in_sz), rows, cols);
    std::copy(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(p * out_sz));
  }
  return tape.record(Shape{x.dim(0), x.dim(1), rows.out, cols.out}, std::move(out), {&x},
                     [rows = std::move(rows), cols = std::move(cols), planes, in_sz, out_sz](
                         std::span<const T> g, std::span<std::vector<T>*> in) {
                       for (std::size_t p = 0; p < planes; ++p) {
                         resample_plane_transposed<T>(g.subspan(p * out_sz, out_sz),
                                                      std::span<T>(*in[0]).subspan(p * in_sz, in_sz), rows, cols);
                       }
                     });
}

/// Bilinear downsampling to the even-floor target of scale `s`.
template <class T>
Tensor<T> bilinear_downsample(Tape<T>& tape, const Tensor<T>& x, ScaleRatio s) {
  detail::require_rank(x, 4, "bilinear_downsample");
  if (s.num > s.den) throw DomainError("bilinear_downsample needs a scale <= 1, got " + s.str());
  const std::size_t h = x.dim(2), w = x.dim(3);
  return resample2d(tape, x, bilinear_axis(h, s.scaled_dim(h)), bilinear_axis(w, s.scaled_dim(w)));
}

/// Keys (a = -0.5) bicubic upsampling to an explicit target size.
template <class T>
Tensor<T> bicubic_upsample(Tape<T>& tape, const Tensor<T>& x, std::size_t target_h, std::size_t target_w) {
  detail::require_rank(x, 4, "bicubic_upsample");
  if (target_h < x.dim(2) || target_w < x.dim(3)) {
    throw ShapeError("bicubic_upsample: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                     " is smaller than source " + shape_str(x.shape()));
  }
  return resample2d(tape, x, bicubic_axis(x.dim(2), target_h), bicubic_axis(x.dim(3), target_w));
}

enum class ResizeFilter { kBilinear, kBicubic, kLanczos };

inline AxisWeights axis_for(ResizeFilter f, std::size_t in, std::size_t out) {
  switch (f) {
    case ResizeFilter::kBilinear: return bilinear_axis(in, out);
    case ResizeFilter::kBicubic: return in > out ? bicubic_antialiased_axis(in, out) : bicubic_axis(in, out);
    case ResizeFilter::kLanczos: return lanczos_axis(in, out);
  }
  return bilinear_axis(in, out);
}

/// Resizes a frame to explicit luma dimensions; chroma follows the layout.
inline FramePlanar resize_frame(const FramePlanar& f, std::size_t width, std::size_t height, ResizeFilter filter) {
  FramePlanar out;
  out.layout = f.layout;
  for (std::size_t p = 0; p < 3; ++p) {
    const Plane& src = f.plane(p);
    std::size_t w = width, h = height;
    if (p > 0 && f.layout == ChromaLayout::k420) {
      if (width % 2 || height % 2) throw ShapeError("resize_frame: 4:2:0 target must be even");
      w /= 2;
      h /= 2;
    }
    out.plane(p) = resample(src, axis_for(filter, src.height, h), axis_for(filter, src.width, w));
  }
  return out;
}

/// Lanczos-3 resize by a scale ratio (baseline path, not differentiable).
inline FramePlanar lanczos_resize(const FramePlanar& f, ScaleRatio s) {
  return resize_frame(f, s.scaled_dim(f.width()), s.scaled_dim(f.height()), ResizeFilter::kLanczos);
}

}  // namespace scaled
