#pragma once

// Central finite-difference gradient checking. Uses only forward
// evaluations, so it is independent of every op's backward rule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "scaled/rng.hpp"
#include "scaled/tensor.hpp"

namespace scaled {

struct GradcheckResult {
  double max_rel_error = 0;
  std::size_t coords_checked = 0;
};

/// Scalar function of several inputs, evaluated on a fresh tape.
using ScalarFn = std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>;

/// Compares tape gradients of `fn` with central differences at step `h`.
/// At most `max_coords` coordinates per input are checked (sampled with `seed`).
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
inline GradcheckResult gradcheck(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double h = 1e-5,
                                 std::size_t max_coords = 64, std::uint64_t seed = 1) {
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Tensor<double>> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
    const auto loss = fn(tape, leaves);
    const auto grads = tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(grads.of(l));
  }

  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    return fn(tape, xs).item();
  };

  GradcheckResult r;
  CounterRng rng(seed, 0x6772616463ULL);
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      const double orig = inputs[k][i];
      probe[k].mutable_data()[i] = orig + h;
      const double fp = eval(probe);
      probe[k].mutable_data()[i] = orig - h;
      const double fm = eval(probe);
      probe[k].mutable_data()[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
      ++r.coords_checked;
    }
  }
  return r;
}

/// Tensor of i.i.d. uniform values in [lo, hi).
inline Tensor<double> random_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace scaled
