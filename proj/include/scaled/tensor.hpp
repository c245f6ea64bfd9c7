#pragma once

// Minimal reverse-mode automatic differentiation.
//
// A Tensor is a value: shape plus contiguous row-major data. Tensors that
// require gradients carry the id of the Tape node that produced them. Every
// op takes the Tape explicitly; when none of an op's inputs require
// gradients, nothing is recorded and the result is a plain constant.
//
// Node ids are assigned in creation order, so reverse id order is a valid
// topological order for backward.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "scaled/error.hpp"

namespace scaled {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
class Tape;

template <class T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T{0}); }

  static Tensor filled(Shape shape, T value) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  /// Mutable access is only for constants and leaves not yet on a tape.
  std::span<T> mutable_data() { return data_; }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  T operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  std::optional<std::size_t> node() const { return node_; }

  /// Same data reinterpreted with another shape of equal size. Keeps the node.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  /// Copy with no tape association.
  Tensor detached() const { return Tensor(shape_, data_); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  friend class Tape<T>;

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  std::optional<std::size_t> node_;
};

/// Gradients produced by one backward pass, indexed by tape node.
template <class T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::vector<T>> by_node) : by_node_(std::move(by_node)) {}

  /// Gradient of the loss with respect to `t`; zeros when `t` was unreachable.
  std::vector<T> of(const Tensor<T>& t) const {
    if (!t.node() || *t.node() >= by_node_.size() || by_node_[*t.node()].empty()) {
      return std::vector<T>(t.size(), T{0});
    }
    return by_node_[*t.node()];
  }

 private:
  std::vector<std::vector<T>> by_node_;
};

template <class T>
class Tape {
 public:
  /// Accumulates the op's input gradients given its output gradient. Entries
  /// of `input_grads` are null for inputs that do not require gradients.
  using BackwardFn = std::function<void(std::span<const T> grad_out, std::span<std::vector<T>*> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a copy of `t` as a differentiable leaf.
  Tensor<T> leaf(const Tensor<T>& t) {
    Tensor<T> out = t.detached();
    out.requires_grad_ = true;
    out.node_ = nodes_.size();
    nodes_.push_back(Node{{}, {}, out.size()});
    return out;
  }

  /// Records an op result. Returns a constant if no input requires grad.
  Tensor<T> record(Shape shape, std::vector<T> value, std::initializer_list<const Tensor<T>*> inputs,
                   BackwardFn backward) {
    Tensor<T> out(std::move(shape), std::move(value));
    std::vector<std::optional<std::size_t>> ids;
    bool any = false;
    for (const Tensor<T>* in : inputs) {
      if (in->requires_grad() && in->node()) {
        if (*in->node() >= nodes_.size()) throw Error("tensor belongs to a different tape");
        ids.push_back(in->node());
        any = true;
      } else {
        ids.push_back(std::nullopt);
      }
    }
    if (!any) return out;
    out.requires_grad_ = true;
    out.node_ = nodes_.size();
    nodes_.push_back(Node{std::move(ids), std::move(backward), out.size()});
    return out;
  }

  std::size_t node_count() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Each node is visited once.
  Gradients<T> backward(const Tensor<T>& loss) const {
    if (loss.size() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.node() || *loss.node() >= nodes_.size()) throw Error("loss is not recorded on this tape");
    std::vector<std::vector<T>> grads(nodes_.size());
    grads[*loss.node()] = std::vector<T>(1, T{1});
    std::vector<std::vector<T>*> targets;
    for (std::size_t id = *loss.node() + 1; id-- > 0;) {
      const Node& node = nodes_[id];
      if (grads[id].empty() || !node.backward) continue;
      targets.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        if (!node.inputs[k]) continue;
        auto& g = grads[*node.inputs[k]];
        if (g.empty()) g.assign(nodes_[*node.inputs[k]].size, T{0});
        targets[k] = &g;
      }
      node.backward(grads[id], targets);
    }
    return Gradients<T>(std::move(grads));
  }

 private:
  struct Node {
    std::vector<std::optional<std::size_t>> inputs;
    BackwardFn backward;
    std::size_t size = 0;
  };
  std::vector<Node> nodes_;
};

namespace detail {

/// Accumulator type for reductions: float tensors sum in double.
template <class T>
using Accum = std::conditional_t<(sizeof(T) < sizeof(double)), double, T>;

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return tape.record(a.shape(), std::move(out), {&a, &b}, [](std::span<const T> g, std::span<std::vector<T>*> in) {
    for (auto* gi : in)
      if (gi)
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
  });
}

template <class T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return tape.record(a.shape(), std::move(out), {&a, &b}, [](std::span<const T> g, std::span<std::vector<T>*> in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    if (in[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
  });
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return tape.record(a.shape(), std::move(out), {&a, &b},
                     [av = a.values(), bv = b.values()](std::span<const T> g, std::span<std::vector<T>*> in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * bv[i];
                       if (in[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * av[i];
                     });
}

template <class T>
Tensor<T> div(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return tape.record(a.shape(), out, {&a, &b},
                     [q = out, bv = b.values()](std::span<const T> g, std::span<std::vector<T>*> in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] / bv[i];
                       if (in[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i] * q[i] / bv[i];
                     });
}

/// a * c + d for scalar constants c, d.
template <class T>
Tensor<T> affine(Tape<T>& tape, const Tensor<T>& a, T scale, T offset = T{0}) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * scale + offset;
  return tape.record(a.shape(), std::move(out), {&a}, [scale](std::span<const T> g, std::span<std::vector<T>*> in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * scale;
  });
}

template <class T>
Tensor<T> leaky_relu(Tape<T>& tape, const Tensor<T>& x, T slope) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T{0} ? x[i] : slope * x[i];
  return tape.record(x.shape(), std::move(out), {&x},
                     [xv = x.values(), slope](std::span<const T> g, std::span<std::vector<T>*> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += xv[i] > T{0} ? g[i] : slope * g[i];
                     });
}

/// Identity in the forward pass, zero gradient in the backward pass.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return x.detached();
}

/// Forward value is `value` (bit-exact); backward passes the cotangent to `z`
/// unchanged. Used to pin a surrogate branch to a measured signal.
template <class T>
Tensor<T> with_value(Tape<T>& tape, const Tensor<T>& z, const Tensor<T>& value) {
  detail::require_same_shape(z, value, "with_value");
  return tape.record(z.shape(), value.values(), {&z}, [](std::span<const T> g, std::span<std::vector<T>*> in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  detail::Accum<T> acc{0};
  for (T v : x.data()) acc += v;
  return tape.record(Shape{}, {static_cast<T>(acc)}, {&x}, [](std::span<const T> g, std::span<std::vector<T>*> in) {
    for (auto& v : *in[0]) v += g[0];
  });
}

template <class T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  return affine(tape, sum(tape, x), T{1} / static_cast<T>(x.size()));
}

/// Mean squared error, normalized by element count.
template <class T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mse");
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mse of empty tensors");
  std::vector<T> diff(n);
  detail::Accum<T> acc{0};
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = a[i] - b[i];
    acc += static_cast<detail::Accum<T>>(diff[i]) * diff[i];
  }
  const T inv_n = T{1} / static_cast<T>(n);
  return tape.record(Shape{}, {static_cast<T>(acc / static_cast<detail::Accum<T>>(n))}, {&a, &b},
                     [diff = std::move(diff), inv_n](std::span<const T> g, std::span<std::vector<T>*> in) {
                       const T k = T{2} * g[0] * inv_n;
                       if (in[0])
                         for (std::size_t i = 0; i < diff.size(); ++i) (*in[0])[i] += k * diff[i];
                       if (in[1])
                         for (std::size_t i = 0; i < diff.size(); ++i) (*in[1])[i] -= k * diff[i];
                     });
}

/// Population standard deviation of each of `groups` contiguous equal slices.
/// Result has shape {groups}. A group with sigma == 0 contributes no gradient.
template <class T>
Tensor<T> std_dev_groups(Tape<T>& tape, const Tensor<T>& x, std::size_t groups) {
  if (groups == 0 || x.size() % groups != 0) {
    throw ShapeError("std_dev_groups: " + std::to_string(x.size()) + " elements not divisible into " +
                     std::to_string(groups) + " groups");
  }
  const std::size_t n = x.size() / groups;
  if (n < 2) throw ShapeError("std_dev needs at least 2 elements per group");
  std::vector<T> sigma(groups), means(groups);
  using A = detail::Accum<T>;
  for (std::size_t grp = 0; grp < groups; ++grp) {
    const T* p = x.data().data() + grp * n;
    const bool constant = std::all_of(p, p + n, [&](T v) { return v == p[0]; });
    A m{0};
    for (std::size_t i = 0; i < n; ++i) m += p[i];
    m /= static_cast<A>(n);
    if (constant) m = p[0];  // exact zero spread, whatever the summation rounding
    A ss{0};
    for (std::size_t i = 0; i < n; ++i) ss += (p[i] - m) * (p[i] - m);
    means[grp] = static_cast<T>(m);
    sigma[grp] = static_cast<T>(std::sqrt(ss / static_cast<A>(n)));
  }
  return tape.record(
      Shape{groups}, sigma, {&x},
      [xv = x.values(), means, sigma, n](std::span<const T> g, std::span<std::vector<T>*> in) {
        for (std::size_t grp = 0; grp < sigma.size(); ++grp) {
          if (sigma[grp] == T{0}) continue;
          const T k = g[grp] / (static_cast<T>(n) * sigma[grp]);
          for (std::size_t i = grp * n; i < (grp + 1) * n; ++i) (*in[0])[i] += k * (xv[i] - means[grp]);
        }
      });
}

/// Population standard deviation over all elements; scalar result.
template <class T>
Tensor<T> std_dev(Tape<T>& tape, const Tensor<T>& x) {
  return std_dev_groups(tape, x, 1).reshaped(Shape{});
}

/// Multiplies each of the `s.size()` contiguous equal slices of x by s[group].
template <class T>
Tensor<T> mul_groups(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& s) {
  const std::size_t groups = s.size();
  if (groups == 0 || x.size() % groups != 0) throw ShapeError("mul_groups: group count does not divide tensor");
  const std::size_t n = x.size() / groups;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s[i / n];
  return tape.record(x.shape(), std::move(out), {&x, &s},
                     [xv = x.values(), sv = s.values(), n](std::span<const T> g, std::span<std::vector<T>*> in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * sv[i / n];
                       if (in[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i / n] += g[i] * xv[i];
                     });
}

// ---------------------------------------------------------------------------
// Layout

/// Channel `c` of an NCHW tensor, as N x 1 x H x W.
template <class T>
Tensor<T> select_channel(Tape<T>& tape, const Tensor<T>& x, std::size_t c) {
  detail::require_rank(x, 4, "select_channel");
  const std::size_t n = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c >= ch) throw ShapeError("select_channel: channel out of range");
  std::vector<T> out(n * hw);
  for (std::size_t b = 0; b < n; ++b)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((b * ch + c) * hw), hw,
                out.begin() + static_cast<std::ptrdiff_t>(b * hw));
  return tape.record(Shape{n, 1, x.dim(2), x.dim(3)}, std::move(out), {&x},
                     [n, ch, hw, c](std::span<const T> g, std::span<std::vector<T>*> in) {
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t i = 0; i < hw; ++i) (*in[0])[(b * ch + c) * hw + i] += g[b * hw + i];
                     });
}

// ---------------------------------------------------------------------------
// Convolution

/// Stride-1 2-D convolution (cross-correlation), NCHW input, OIKK weight,
/// zero padding of `padding` pixels on every side.
template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t padding) {
  detail::require_rank(x, 4, "conv2d input");
  detail::require_rank(w, 4, "conv2d weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels but weight expects " +
                     std::to_string(w.dim(1)));
  }
  if (b.size() != cout) throw ShapeError("conv2d: bias length does not match output channels");
  if (h + 2 * padding < kh || wd + 2 * padding < kw) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t ho = h + 2 * padding - kh + 1, wo = wd + 2 * padding - kw + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  // Visits every (output row y, input row yi, column ranges) overlap of tap (ky, kx).
  auto for_each_row = [=](std::size_t ky, std::size_t kx, auto&& fn) {
    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
    const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
    const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
    const std::size_t x1 = static_cast<std::size_t>(
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(wo), static_cast<std::ptrdiff_t>(wd) - dx));
    if (x1 <= x0) return;
    for (std::size_t y = 0; y < ho; ++y) {
      const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(y) + dy;
      if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
      fn(y * wo, static_cast<std::size_t>(yi) * wd + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x0) + dx),
         x0, x1 - x0);
    }
  };

  std::vector<T> out(batch * cout * ho * wo);
  const T* xin = x.data().data();
  const T* wt = w.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      T* dst = out.data() + (n * cout + o) * ho * wo;
      std::fill_n(dst, ho * wo, b[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const T* src = xin + (n * cin + c) * h * wd;
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T k = wt[((o * cin + c) * kh + ky) * kw + kx];
            for_each_row(ky, kx, [&](std::size_t orow, std::size_t irow, std::size_t ox, std::size_t len) {
              T* d = dst + orow + ox;
              const T* s = src + irow;
              for (std::size_t i = 0; i < len; ++i) d[i] += k * s[i];
            });
          }
      }
    }
  }

  return tape.record(
      Shape{batch, cout, ho, wo}, std::move(out), {&x, &w, &b},
      [xv = x.values(), wv = w.values(), batch, cin, cout, h, wd, ho, wo, kh, kw, for_each_row](
          std::span<const T> g, std::span<std::vector<T>*> in) {
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t o = 0; o < cout; ++o) {
            const T* go = g.data() + (n * cout + o) * ho * wo;
            if (in[2]) {
              T acc{0};
              for (std::size_t i = 0; i < ho * wo; ++i) acc += go[i];
              (*in[2])[o] += acc;
            }
            for (std::size_t c = 0; c < cin; ++c) {
              const std::size_t plane = (n * cin + c) * h * wd;
              for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::size_t widx = ((o * cin + c) * kh + ky) * kw + kx;
                  const T k = wv[widx];
                  T acc{0};
                  for_each_row(ky, kx, [&](std::size_t orow, std::size_t irow, std::size_t ox, std::size_t len) {
                    const T* gr = go + orow + ox;
                    if (in[0]) {
                      T* gi = in[0]->data() + plane + irow;
                      for (std::size_t i = 0; i < len; ++i) gi[i] += k * gr[i];
                    }
                    if (in[1]) {
                      const T* s = xv.data() + plane + irow;
                      for (std::size_t i = 0; i < len; ++i) acc += gr[i] * s[i];
                    }
                  });
                  if (in[1]) (*in[1])[widx] += acc;
                }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam update with bias correction. Moments are created on first use.
template <class T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), T{0});
      state.second_moment.emplace_back(p.size(), T{0});
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].size() || state.first_moment[k].size() != params[k].size()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(k));
    }
  }
  ++state.step;
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(state.lr), eps = static_cast<T>(state.epsilon);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_data();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T mhat = m[i] / c1;
      const T vhat = v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace scaled
