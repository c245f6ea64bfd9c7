#pragma once

// Learned downsampler: pre-filter CNN -> bilinear downsample -> detail CNN.
// Each CNN half is `layers` stride-1 convolutions (leaky ReLU between them,
// none after the last) wrapped in a residual skip, so the all-zero network
// is exactly plain bilinear downsampling.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scaled/error.hpp"
#include "scaled/resample.hpp"
#include "scaled/rng.hpp"
#include "scaled/tensor.hpp"

namespace scaled {

struct ModelConfig {
  std::size_t hidden = 32;
  std::size_t layers = 5;  // per CNN half
  std::size_t kernel = 3;
  double slope = 0.1;      // leaky ReLU

  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct ProgDownLite {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  template <class U>
  ProgDownLite<U> cast() const {
    ProgDownLite<U> out{config, names, {}};
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  /// Registers every parameter as a leaf on `tape`.
  std::vector<Tensor<T>> bind(Tape<T>& tape) const {
    std::vector<Tensor<T>> leaves;
    leaves.reserve(tensors.size());
    for (const auto& t : tensors) leaves.push_back(tape.leaf(t));
    return leaves;
  }
};

namespace detail {

inline std::vector<std::pair<std::size_t, std::size_t>> layer_channels(const ModelConfig& c) {
  std::vector<std::pair<std::size_t, std::size_t>> io;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::size_t in = l == 0 ? 3 : c.hidden;
    const std::size_t out = l + 1 == c.layers ? 3 : c.hidden;
    io.emplace_back(in, out);
  }
  return io;
}

}  // namespace detail

/// Kaiming (fan-in) normal weights, zero biases; deterministic per seed.
inline ProgDownLite<float> init_params(std::uint64_t seed, const ModelConfig& cfg = {}) {
  if (cfg.hidden < 1) throw DomainError("hidden_channels must be >= 1");
  if (cfg.layers < 2) throw DomainError("each CNN half needs at least 2 layers");
  if (cfg.kernel % 2 == 0) throw DomainError("kernel size must be odd for same padding");
  ProgDownLite<float> m{cfg, {}, {}};
  const auto io = detail::layer_channels(cfg);
  std::uint64_t stream = 0;
  for (const char* half : {"pre", "post"}) {
    for (std::size_t l = 0; l < io.size(); ++l) {
      const auto [cin, cout] = io[l];
      const std::size_t fan_in = cin * cfg.kernel * cfg.kernel;
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      CounterRng rng(seed, ++stream);
      std::vector<float> w(cout * fan_in);
      for (auto& v : w) v = static_cast<float>(std_dev * rng.normal());
      const std::string prefix = std::string(half) + "." + std::to_string(l);
      m.names.push_back(prefix + ".weight");
      m.tensors.emplace_back(Shape{cout, cin, cfg.kernel, cfg.kernel}, std::move(w));
      m.names.push_back(prefix + ".bias");
      m.tensors.push_back(Tensor<float>::zeros(Shape{cout}));
    }
  }
  return m;
}

/// Exact number of trainable scalars.
template <class T>
std::size_t param_count(const ProgDownLite<T>& m) {
  std::size_t n = 0;
  for (const auto& t : m.tensors) n += t.size();
  return n;
}

/// Closed-form parameter count for a configuration.
inline std::size_t param_count(const ModelConfig& c) {
  std::size_t n = 0;
  for (const auto& [cin, cout] : detail::layer_channels(c)) n += cout * cin * c.kernel * c.kernel + cout;
  return 2 * n;
}

namespace detail {

template <class T>
Tensor<T> cnn_half(Tape<T>& tape, const Tensor<T>& x, std::span<const Tensor<T>> params, const ModelConfig& cfg) {
  Tensor<T> h = x;
  const std::size_t pad = cfg.kernel / 2;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    h = conv2d(tape, h, params[2 * l], params[2 * l + 1], pad);
    if (l + 1 < cfg.layers) h = leaky_relu(tape, h, static_cast<T>(cfg.slope));
  }
  return add(tape, x, h);
}

}  // namespace detail

/// y = f(x): N x 3 x H x W -> N x 3 x even_floor(H s) x even_floor(W s).
/// `params` are the tensors of a ProgDownLite in order (usually bound leaves).
template <class T>
Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, std::span<const Tensor<T>> params, const ModelConfig& cfg,
                  ScaleRatio s) {
  detail::require_rank(x, 4, "forward");
  if (x.dim(1) != 3) throw ShapeError("downsampler expects 3 input channels");
  if (params.size() != 4 * cfg.layers) throw ShapeError("downsampler parameter list has the wrong length");
  const Tensor<T> pre = detail::cnn_half(tape, x, params.first(2 * cfg.layers), cfg);
  const Tensor<T> low = bilinear_downsample(tape, pre, s);
  return detail::cnn_half(tape, low, params.subspan(2 * cfg.layers), cfg);
}

template <class T>
Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, const ProgDownLite<T>& model, ScaleRatio s) {
  return forward<T>(tape, x, model.tensors, model.config, s);
}

}  // namespace scaled
