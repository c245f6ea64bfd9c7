#pragma once

// Differentiating through a black-box codec.
//
// Both estimators return the codec reconstruction, bit-exactly, as the
// forward value. They differ in the backward pass:
//
//   ste:    y_hat = y + sg(eps)                       d y_hat / d y = I
//   scaled: y_hat = y + sg(eps) * sigma(eps) / sg(sigma(eps))
//           d y_hat / d y = I - eps (eps - mean(eps))^T / (N sigma^2)
//
// with eps = recon - y computed on the tape against the detached recon, so
// d eps / d y = -I is the only path into sigma. The scaled Jacobian is not
// hand-coded: it comes out of the tape from std_dev_groups + stop_gradient.
// sigma is taken per group (one sample, or one channel of one sample).

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "scaled/codec.hpp"
#include "scaled/error.hpp"
#include "scaled/tensor.hpp"

namespace scaled {

enum class SurrogateMode { kSte, kScaled };
enum class SigmaScope { kPerSample, kPerChannel };

inline std::string to_string(SigmaScope s) { return s == SigmaScope::kPerSample ? "per-sample" : "per-channel"; }

inline SigmaScope parse_sigma_scope(const std::string& s) {
  if (s == "per-sample") return SigmaScope::kPerSample;
  if (s == "per-channel") return SigmaScope::kPerChannel;
  throw DomainError("unknown sigma scope '" + s + "'");
}

struct SurrogateConfig {
  SurrogateMode mode = SurrogateMode::kScaled;
  SigmaScope scope = SigmaScope::kPerSample;
  double sigma_floor = 1e-6;
};

/// Counters reported by apply(); accumulated across calls.
struct SurrogateDiagnostics {
  std::size_t groups = 0;
  std::size_t fallbacks = 0;
};

/// Number of contiguous sigma groups of `y` under `scope`. Rank-4 tensors are
/// NCHW; lower ranks are a single sample.
inline std::size_t sigma_groups(const Shape& shape, SigmaScope scope) {
  if (shape.size() < 2) return 1;
  if (scope == SigmaScope::kPerChannel && shape.size() >= 3) return shape[0] * shape[1];
  return shape[0];
}

/// Straight-through: forward = recon, backward = identity.
template <class T>
Tensor<T> ste_apply(Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& recon) {
  detail::require_same_shape(y, recon, "ste_apply");
  return with_value(tape, y, recon);
}

template <class T>
Tensor<T> ste_apply(Tape<T>& tape, const Tensor<T>& y, const CodecResult& codec_out) {
  return ste_apply(tape, y, frames_to_tensor<T>(codec_out.recon));
}

namespace detail {

// Groups flagged in `degenerate` use sigma-ratio 1 with no gradient (STE).
template <class T>
Tensor<T> scaled_surrogate(Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& recon, std::size_t groups,
                           double sigma_floor, SurrogateDiagnostics* diag) {
  require_same_shape(y, recon, "scaled_apply");
  if (y.size() / groups < 2) throw ShapeError("scaled surrogate needs at least 2 elements per sigma group");

  const Tensor<T> eps = sub(tape, recon.detached(), y);
  const Tensor<T> sigma = std_dev_groups(tape, eps, groups);
  const Tensor<T> sigma_sg = stop_gradient(sigma);

  std::vector<T> keep(groups), denom(groups), bypass(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const bool degenerate = sigma_sg[g] == T{0} || static_cast<double>(sigma_sg[g]) < sigma_floor;
    keep[g] = degenerate ? T{0} : T{1};
    denom[g] = degenerate ? T{1} : sigma_sg[g];
    bypass[g] = T{1} - keep[g];
    if (diag && degenerate) ++diag->fallbacks;
  }
  if (diag) diag->groups += groups;
  const Shape gshape{groups};
  // ratio = sigma / sg(sigma) on live groups, the constant 1 on degenerate ones
  const Tensor<T> live = mul(tape, sigma, Tensor<T>(gshape, keep));
  const Tensor<T> ratio = add(tape, div(tape, live, Tensor<T>(gshape, denom)), Tensor<T>(gshape, bypass));
  const Tensor<T> z = add(tape, y, mul_groups(tape, stop_gradient(eps), ratio));
  return with_value(tape, z, recon);
}

}  // namespace detail

/// Scaled surrogate with no floor; groups whose error is exactly constant
/// (sigma == 0) take the identity Jacobian, which is the limit of the formula.
template <class T>
Tensor<T> scaled_apply(Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& recon, const SurrogateConfig& cfg) {
  return detail::scaled_surrogate(tape, y, recon, sigma_groups(y.shape(), cfg.scope), 0.0, nullptr);
}

template <class T>
Tensor<T> scaled_apply(Tape<T>& tape, const Tensor<T>& y, const CodecResult& codec_out, const SurrogateConfig& cfg) {
  return scaled_apply(tape, y, frames_to_tensor<T>(codec_out.recon), cfg);
}

/// Mode dispatch. In scaled mode every group with sigma(eps) < sigma_floor
/// falls back to STE and is counted in `diag.fallbacks`.
template <class T>
Tensor<T> apply(Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& recon, const SurrogateConfig& cfg,
                SurrogateDiagnostics& diag) {
  if (!(cfg.sigma_floor > 0.0)) throw DomainError("sigma_floor must be positive");
  if (cfg.mode == SurrogateMode::kSte) return ste_apply(tape, y, recon);
  return detail::scaled_surrogate(tape, y, recon, sigma_groups(y.shape(), cfg.scope), cfg.sigma_floor, &diag);
}

template <class T>
Tensor<T> apply(Tape<T>& tape, const Tensor<T>& y, const CodecResult& codec_out, const SurrogateConfig& cfg,
                SurrogateDiagnostics& diag) {
  return apply(tape, y, frames_to_tensor<T>(codec_out.recon), cfg, diag);
}

}  // namespace scaled
