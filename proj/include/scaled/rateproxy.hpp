#pragma once

// Differentiable rate estimate: R_hat = a * soft_l0(blockDCT(luma)) + b,
// soft_l0(c) = sum c^2 / (c^2 + tau^2). (a, b) are fitted against true codec
// bits and frozen for a training task.

#include <algorithm>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "scaled/codec.hpp"
#include "scaled/dct.hpp"
#include "scaled/error.hpp"
#include "scaled/stats.hpp"
#include "scaled/tensor.hpp"

namespace scaled {

struct RateProxyParams {
  double tau = 0.02;
  double a = 1.0;
  double b = 0.0;
  std::size_t block = 8;
  bool calibrated = false;

  void validate() const {
    if (!(tau > 0)) throw DomainError("rate proxy tau must be > 0");
    if (!(a >= 0)) throw DomainError("rate proxy slope a must be >= 0");
    if (block != dct::kBlock) throw DomainError("rate proxy supports 8x8 blocks only");
  }
};

/// Orthonormal 8x8 DCT-II of every block of every plane. Planes whose sides
/// are not multiples of 8 are first padded by edge replication; the result
/// has the padded size and stores block coefficients in place.
template <class T>
Tensor<T> block_dct2d(Tape<T>& tape, const Tensor<T>& x, std::size_t block = dct::kBlock) {
  detail::require_rank(x, 4, "block_dct2d");
  if (block != dct::kBlock) throw DomainError("block_dct2d supports 8x8 blocks only");
  constexpr std::size_t B = dct::kBlock;
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ph = (h + B - 1) / B * B, pw = (w + B - 1) / B * B;
  std::vector<T> padded(planes * ph * pw), out(planes * ph * pw);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t xx = 0; xx < pw; ++xx)
        padded[(p * ph + y) * pw + xx] = x[(p * h + std::min(y, h - 1)) * w + std::min(xx, w - 1)];
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t by = 0; by < ph; by += B)
      for (std::size_t bx = 0; bx < pw; bx += B) {
        const std::size_t off = (p * ph + by) * pw + bx;
        dct::forward(padded.data() + off, pw, out.data() + off, pw);
      }
  return tape.record(Shape{x.dim(0), x.dim(1), ph, pw}, std::move(out), {&x},
                     [planes, h, w, ph, pw](std::span<const T> g, std::span<std::vector<T>*> in) {
                       // Orthonormal: the transpose is the inverse transform.
                       std::vector<T> gp(g.size());
                       for (std::size_t p = 0; p < planes; ++p)
                         for (std::size_t by = 0; by < ph; by += B)
                           for (std::size_t bx = 0; bx < pw; bx += B) {
                             const std::size_t off = (p * ph + by) * pw + bx;
                             dct::inverse(g.data() + off, pw, gp.data() + off, pw);
                           }
                       auto& gx = *in[0];
                       for (std::size_t p = 0; p < planes; ++p)
                         for (std::size_t y = 0; y < ph; ++y)
                           for (std::size_t xx = 0; xx < pw; ++xx)
                             gx[(p * h + std::min(y, h - 1)) * w + std::min(xx, w - 1)] += gp[(p * ph + y) * pw + xx];
                     });
}

/// Inverse of block_dct2d for unpadded sizes (test and analysis helper).
template <class T>
std::vector<T> block_idct2d(std::span<const T> coeffs, std::size_t planes, std::size_t h, std::size_t w) {
  constexpr std::size_t B = dct::kBlock;
  if (h % B || w % B || coeffs.size() != planes * h * w) throw ShapeError("block_idct2d: sizes must be multiples of 8");
  std::vector<T> out(coeffs.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t by = 0; by < h; by += B)
      for (std::size_t bx = 0; bx < w; bx += B) {
        const std::size_t off = (p * h + by) * w + bx;
        dct::inverse(coeffs.data() + off, w, out.data() + off, w);
      }
  return out;
}

/// Smooth nonzero count: sum c^2 / (c^2 + tau^2).
template <class T>
Tensor<T> soft_l0(Tape<T>& tape, const Tensor<T>& coeffs, double tau) {
  if (!(tau > 0)) throw DomainError("soft_l0: tau must be > 0");
  const T t2 = static_cast<T>(tau * tau);
  detail::Accum<T> acc{0};
  for (T c : coeffs.data()) acc += c * c / (c * c + t2);
  return tape.record(Shape{}, {static_cast<T>(acc)}, {&coeffs},
                     [cv = coeffs.values(), t2](std::span<const T> g, std::span<std::vector<T>*> in) {
                       for (std::size_t i = 0; i < cv.size(); ++i) {
                         const T d = cv[i] * cv[i] + t2;
                         (*in[0])[i] += g[0] * T{2} * cv[i] * t2 / (d * d);
                       }
                     });
}

/// Estimated bits for the luma of every sample in `y` (N x 3 x H x W), summed.
template <class T>
Tensor<T> rate_estimate(Tape<T>& tape, const Tensor<T>& y, const RateProxyParams& p) {
  p.validate();
  const Tensor<T> luma = y.dim(1) == 1 ? y : select_channel(tape, y, 0);
  const Tensor<T> count = soft_l0(tape, block_dct2d(tape, luma, p.block), p.tau);
  return affine(tape, count, static_cast<T>(p.a), static_cast<T>(p.b));
}

/// soft_l0 of the luma DCT of one frame, no tape.
inline double soft_l0_of_frame(const FramePlanar& f, double tau) {
  Tape<double> tape;
  const Tensor<double> luma(Shape{1, 1, f.height(), f.width()}, std::vector<double>(f.y.samples.begin(), f.y.samples.end()));
  return soft_l0(tape, block_dct2d(tape, luma), tau).item();
}

struct CalibrationReport {
  RateProxyParams params;
  double pearson = 0;
  double spearman = 0;
  std::size_t samples = 0;
  std::vector<double> features;  // soft_l0 of each reconstruction
  std::vector<double> bits;      // true codec bits of each reconstruction
};

/// Least-squares (a, b) from paired soft_l0 features and true bit counts.
inline CalibrationReport fit_proxy(std::vector<double> features, std::vector<double> bits, double tau) {
  const auto fit = stats::fit_affine(features, bits);
  if (fit.slope < 0) throw DomainError("calibration produced a negative bits-per-coefficient slope");
  CalibrationReport r;
  r.params.tau = tau;
  r.params.a = fit.slope;
  r.params.b = fit.intercept;
  r.params.calibrated = true;
  r.pearson = stats::pearson(features, bits);
  r.spearman = stats::spearman(features, bits);
  r.samples = features.size();
  r.features = std::move(features);
  r.bits = std::move(bits);
  return r;
}

/// Fits (a, b) of the proxy against true codec bits. Each sample is one frame
/// coded at one setting; the feature is soft_l0 of the codec reconstruction,
/// so different settings spread the feature range.
inline CalibrationReport calibrate(const std::vector<FramePlanar>& frames, const std::vector<CodecConfig>& settings,
                                   double tau) {
  if (frames.size() < 8) throw DomainError("calibration needs at least 8 frames, got " + std::to_string(frames.size()));
  std::set<std::pair<int, double>> distinct;
  for (const auto& c : settings) {
    const bool toy = c.backend == CodecBackend::kToyDct;
    distinct.emplace(toy ? 0 : c.qp, toy ? c.toy_qstep() : 0.0);
  }
  if (distinct.size() < 3) {
    throw DomainError("calibration needs at least 3 distinct QP/qstep settings, got " + std::to_string(distinct.size()));
  }
  std::vector<double> features, bits;
  for (const auto& f : frames)
    for (const auto& c : settings) {
      const auto res = encode_decode({f}, c);
      features.push_back(soft_l0_of_frame(res.recon.front(), tau));
      bits.push_back(static_cast<double>(res.bits));
    }
  return fit_proxy(std::move(features), std::move(bits), tau);
}

}  // namespace scaled
