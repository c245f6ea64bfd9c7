#pragma once

// Quality metrics, rate-distortion sweeps, convex hulls and BD-BR.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "scaled/codec.hpp"
#include "scaled/error.hpp"
#include "scaled/frame.hpp"
#include "scaled/media_io.hpp"
#include "scaled/model.hpp"
#include "scaled/parallel.hpp"
#include "scaled/resample.hpp"

namespace scaled {

inline constexpr double kPsnrCap = 99.0;

// ---------------------------------------------------------------------------
// Metrics

enum class Component { kY, kU, kV, kWeighted };

namespace detail {

inline void check_same_dims(const FramePlanar& a, const FramePlanar& b) {
  if (a.layout != b.layout) throw ShapeError("metric inputs differ in chroma layout");
  for (std::size_t p = 0; p < 3; ++p) {
    if (a.plane(p).width != b.plane(p).width || a.plane(p).height != b.plane(p).height) {
      throw ShapeError("metric inputs differ in size: " + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                       " vs " + std::to_string(b.width()) + "x" + std::to_string(b.height()));
    }
  }
}

inline double plane_mse(const Plane& a, const Plane& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const double d = static_cast<double>(a.samples[i]) - b.samples[i];
    s += d * d;
  }
  return s / static_cast<double>(a.samples.size());
}

}  // namespace detail

inline double mse_to_psnr(double mse) {
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Per-plane MSE of Y, U, V.
inline std::array<double, 3> plane_mses(const FramePlanar& a, const FramePlanar& b) {
  detail::check_same_dims(a, b);
  return {detail::plane_mse(a.y, b.y), detail::plane_mse(a.u, b.u), detail::plane_mse(a.v, b.v)};
}

inline double weighted_mse(const std::array<double, 3>& m) { return (6 * m[0] + m[1] + m[2]) / 8; }

inline double psnr(const FramePlanar& a, const FramePlanar& b, Component c = Component::kY) {
  const auto m = plane_mses(a, b);
  if (c == Component::kWeighted) return mse_to_psnr(weighted_mse(m));
  return mse_to_psnr(m[static_cast<std::size_t>(c)]);
}

namespace detail {

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double c = (static_cast<double>(size) - 1) / 2;
  double s = 0;
  for (std::size_t i = 0; i < size; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Valid-mode separable filter of an h x w image.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t w, std::size_t h,
                                        const std::vector<double>& k) {
  const std::size_t n = k.size(), ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(h * ow), out(oh * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * img[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

}  // namespace detail

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM of two planes with a Gaussian window (valid positions only).
inline double ssim_plane(const Plane& a, const Plane& b, const SsimOptions& o = {}) {
  if (a.width != b.width || a.height != b.height) throw ShapeError("ssim: planes differ in size");
  if (a.width < o.window || a.height < o.window) {
    throw ShapeError("ssim: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " is smaller than the " +
                     std::to_string(o.window) + "x" + std::to_string(o.window) + " window");
  }
  const std::size_t w = a.width, h = a.height, n = w * h;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a.samples[i];
    y[i] = b.samples[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = detail::gaussian_window(o.window, o.sigma);
  const auto mx = detail::filter_valid(x, w, h, k), my = detail::filter_valid(y, w, h, k);
  const auto sxx = detail::filter_valid(xx, w, h, k), syy = detail::filter_valid(yy, w, h, k);
  const auto sxy = detail::filter_valid(xy, w, h, k);
  const double c1 = o.k1 * o.k1, c2 = o.k2 * o.k2;
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

inline double ssim(const FramePlanar& a, const FramePlanar& b, const SsimOptions& o = {}) {
  detail::check_same_dims(a, b);
  return ssim_plane(a.y, b.y, o);
}

struct SequenceQuality {
  double psnr_y = 0, psnr_u = 0, psnr_v = 0, psnr_weighted = 0;
  double ssim_y = 0;
};

/// PSNR from per-plane MSE averaged over all frames; SSIM averaged per frame.
inline SequenceQuality measure_sequence(const std::vector<FramePlanar>& ref, const std::vector<FramePlanar>& test) {
  if (ref.empty() || ref.size() != test.size()) throw ShapeError("measure_sequence: frame counts differ or are zero");
  std::array<double, 3> m{0, 0, 0};
  double s = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto fm = plane_mses(ref[i], test[i]);
    for (std::size_t p = 0; p < 3; ++p) m[p] += fm[p];
    s += ssim(ref[i], test[i]);
  }
  const double n = static_cast<double>(ref.size());
  for (auto& v : m) v /= n;
  return {mse_to_psnr(m[0]), mse_to_psnr(m[1]), mse_to_psnr(m[2]), mse_to_psnr(weighted_mse(m)), s / n};
}

// ---------------------------------------------------------------------------
// Rate-distortion points

struct RDPoint {
  std::string dataset;
  std::string sequence;
  std::string filter;
  std::string strategy = "none";
  ScaleRatio scale;
  int qp = 0;
  std::uint64_t bits = 0;
  double rate_bpp = 0;
  double psnr_y = 0, psnr_u = 0, psnr_v = 0, psnr_weighted = 0;
  double ssim_y = 0;
  std::map<std::string, double> extra;  // imported scores, e.g. vmaf

  bool operator==(const RDPoint&) const = default;
};

inline const std::vector<std::string>& builtin_quality_fields() {
  static const std::vector<std::string> f{"psnr_y", "psnr_weighted", "ssim_y"};
  return f;
}

inline double quality_of(const RDPoint& p, const std::string& field) {
  if (field == "psnr_y") return p.psnr_y;
  if (field == "psnr_u") return p.psnr_u;
  if (field == "psnr_v") return p.psnr_v;
  if (field == "psnr_weighted") return p.psnr_weighted;
  if (field == "ssim_y") return p.ssim_y;
  const auto it = p.extra.find(field);
  if (it == p.extra.end()) throw DomainError("RD point has no quality field '" + field + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Convex hull

struct Vec2 {
  double x = 0;  // rate
  double y = 0;  // quality
  bool operator==(const Vec2&) const = default;
};

/// Indices (into `pts`) of the Pareto-optimal upper convex hull, by ascending
/// rate. Collinear points on the hull are kept. Exact duplicates keep the
/// first occurrence.
inline std::vector<std::size_t> hull_indices(const std::vector<Vec2>& pts) {
  if (pts.empty()) throw DomainError("convex hull of an empty point set");
  std::vector<std::size_t> order(pts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pts[a].x != pts[b].x) return pts[a].x < pts[b].x;
    return pts[a].y > pts[b].y;
  });
  std::vector<std::size_t> pareto;
  for (std::size_t i : order)
    if (pareto.empty() || pts[i].y > pts[pareto.back()].y) pareto.push_back(i);

  auto cross = [&](std::size_t o, std::size_t a, std::size_t b) {
    return (pts[a].x - pts[o].x) * (pts[b].y - pts[o].y) - (pts[a].y - pts[o].y) * (pts[b].x - pts[o].x);
  };
  std::vector<std::size_t> hull;
  for (std::size_t i : pareto) {
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), i) > 0) hull.pop_back();
    hull.push_back(i);
  }
  return hull;
}

struct ConvexHull {
  std::string field = "psnr_y";
  std::vector<RDPoint> points;  // ascending rate

  std::vector<Vec2> curve() const {
    std::vector<Vec2> c;
    for (const auto& p : points) c.push_back({p.rate_bpp, quality_of(p, field)});
    return c;
  }
};

inline ConvexHull convex_hull(const std::vector<RDPoint>& points, const std::string& field = "psnr_y") {
  std::vector<Vec2> v;
  for (const auto& p : points) {
    if (!(p.rate_bpp > 0) || !std::isfinite(p.rate_bpp)) throw DomainError("RD point with non-positive rate");
    v.push_back({p.rate_bpp, quality_of(p, field)});
  }
  ConvexHull h{field, {}};
  for (std::size_t i : hull_indices(v)) h.points.push_back(points[i]);
  return h;
}

// ---------------------------------------------------------------------------
// BD-BR

namespace detail {

/// Shape-preserving cubic Hermite slopes (Fritsch-Carlson with one-sided
/// three-point ends).
inline std::vector<double> pchip_slopes(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> h(n - 1), delta(n - 1), d(n, 0.0);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = x[k + 1] - x[k];
    delta[k] = (y[k + 1] - y[k]) / h[k];
  }
  if (n == 2) return {delta[0], delta[0]};
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (delta[k - 1] * delta[k] <= 0) continue;
    const double w1 = 2 * h[k] + h[k - 1], w2 = h[k] + 2 * h[k - 1];
    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
  }
  auto edge = [](double h0, double h1, double m0, double m1) {
    double e = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (std::signbit(e) != std::signbit(m0) || e == 0 || m0 == 0) return 0.0;
    if (std::signbit(m0) != std::signbit(m1) && std::abs(e) > std::abs(3 * m0)) e = 3 * m0;
    return e;
  };
  d[0] = edge(h[0], h[1], delta[0], delta[1]);
  d[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  return d;
}

/// Integral of the Hermite interpolant over [a, b], a <= b, both inside [x0, x_last].
inline double pchip_integral(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& d,
                             double a, double b) {
  // Antiderivatives of the four Hermite basis functions on t in [0, 1].
  auto H00 = [](double t) { return t - t * t * t + t * t * t * t / 2; };
  auto H10 = [](double t) { return t * t / 2 - 2 * t * t * t / 3 + t * t * t * t / 4; };
  auto H01 = [](double t) { return t * t * t - t * t * t * t / 2; };
  auto H11 = [](double t) { return -t * t * t / 3 + t * t * t * t / 4; };
  double total = 0;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) {
    const double lo = std::max(a, x[k]), hi = std::min(b, x[k + 1]);
    if (lo >= hi) continue;
    const double h = x[k + 1] - x[k];
    auto F = [&](double xx) {
      const double t = (xx - x[k]) / h;
      return y[k] * H00(t) + h * d[k] * H10(t) + y[k + 1] * H01(t) + h * d[k + 1] * H11(t);
    };
    total += h * (F(hi) - F(lo));
  }
  return total;
}

}  // namespace detail

/// Mean log10 rate difference (test - reference) over the common quality interval.
inline double bd_log_rate(const ConvexHull& reference, const ConvexHull& test) {
  if (reference.points.size() < 4 || test.points.size() < 4) {
    throw DomainError("BD-BR needs at least 4 hull points per curve, got " + std::to_string(reference.points.size()) +
                      " (reference) and " + std::to_string(test.points.size()) + " (test)");
  }
  auto prep = [](const ConvexHull& hull, std::vector<double>& q, std::vector<double>& lr) {
    for (const auto& c : hull.curve()) {
      q.push_back(c.y);
      lr.push_back(std::log10(c.x));
    }
  };
  std::vector<double> qr, lr, qt, lt;
  prep(reference, qr, lr);
  prep(test, qt, lt);
  const double lo = std::max(qr.front(), qt.front()), hi = std::min(qr.back(), qt.back());
  if (!(hi > lo)) {
    throw DomainError("BD-BR: quality ranges do not overlap (reference [" + std::to_string(qr.front()) + ", " +
                      std::to_string(qr.back()) + "], test [" + std::to_string(qt.front()) + ", " +
                      std::to_string(qt.back()) + "])");
  }
  const double ir = detail::pchip_integral(qr, lr, detail::pchip_slopes(qr, lr), lo, hi);
  const double it = detail::pchip_integral(qt, lt, detail::pchip_slopes(qt, lt), lo, hi);
  return (it - ir) / (hi - lo);
}

/// Percent rate change of `test` against `reference` at equal quality.
inline double bd_br(const ConvexHull& reference, const ConvexHull& test) {
  if (reference.field != test.field) throw DomainError("BD-BR hulls use different quality fields");
  return (std::pow(10.0, bd_log_rate(reference, test)) - 1) * 100;
}

// ---------------------------------------------------------------------------
// Sweep

using Downsampler = std::function<FramePlanar(const FramePlanar&, ScaleRatio)>;

struct SweepFilter {
  std::string name;
  std::string strategy = "none";
  Downsampler down;
  // When set, replaces `down` with a per-(scale, qp) choice, e.g. one trained
  // model per operating point.
  std::function<Downsampler(ScaleRatio, int)> per_point;
};

inline SweepFilter lanczos_filter() {
  return {"lanczos", "none", [](const FramePlanar& f, ScaleRatio s) { return lanczos_resize(f, s); }, {}};
}

inline SweepFilter bicubic_filter() {
  return {"bicubic", "none", [](const FramePlanar& f, ScaleRatio s) {
            return resize_frame(f, s.scaled_dim(f.width()), s.scaled_dim(f.height()), ResizeFilter::kBicubic);
          }, {}};
}

/// Learned downsampler; 4:2:0 input is lifted to 4:4:4 for the network and
/// brought back afterwards.
inline SweepFilter learned_filter(const std::string& name, const std::string& strategy, ProgDownLite<float> model) {
  auto m = std::make_shared<const ProgDownLite<float>>(std::move(model));
  return {name, strategy, [m](const FramePlanar& f, ScaleRatio s) {
            Tape<float> tape;
            const auto y = forward(tape, frames_to_tensor<float>({convert_to_444(f)}), *m, s);
            auto out = tensor_to_frames(y).front();
            return f.layout == ChromaLayout::k420 ? convert_to_420(out) : out;
          }, {}};
}

struct SweepSequence {
  std::string dataset = "default";
  std::string name;
  std::vector<FramePlanar> frames;
};

struct SweepFailure {
  std::string sequence, filter, strategy;
  ScaleRatio scale;
  int qp = 0;
  std::string message;
};

struct SweepResult {
  std::vector<RDPoint> points;
  std::vector<double> seconds;  // wall time per point, same order
  std::vector<SweepFailure> failures;
  std::string encoder_version;
};

struct SweepOptions {
  std::vector<ScaleRatio> scales = default_evaluation_scales();
  std::vector<int> qps = default_evaluation_qps();
  CodecConfig codec;
  std::size_t jobs = 1;
};

/// Every (sequence, filter, scale, qp): downsample, quantize to 8 bits, encode
/// the whole sequence, upsample bicubically to source size, measure. Points
/// come back in grid order regardless of scheduling; failed points are
/// listed in `failures` and left out of `points`.
inline SweepResult rd_sweep(const std::vector<SweepSequence>& sequences, const std::vector<SweepFilter>& filters,
                            const SweepOptions& opt) {
  if (!codec_available(opt.codec)) {
    throw CodecError("rd_sweep: codec " + to_string(opt.codec.backend) + " is not available (encoder '" +
                     opt.codec.external.encoder + "')");
  }
  const std::size_t ns = opt.scales.size(), nq = opt.qps.size();
  struct DownJob {
    std::size_t seq, filt, scale, qp;  // qp == nq: shared by every QP
    std::vector<FramePlanar> frames;
    std::string error;
  };
  std::vector<DownJob> down;
  std::vector<std::size_t> down_of;  // point index -> down job
  for (std::size_t a = 0; a < sequences.size(); ++a)
    for (std::size_t b = 0; b < filters.size(); ++b)
      for (std::size_t c = 0; c < ns; ++c) {
        if (filters[b].per_point) {
          for (std::size_t q = 0; q < nq; ++q) {
            down_of.push_back(down.size());
            down.push_back({a, b, c, q, {}, {}});
          }
        } else {
          for (std::size_t q = 0; q < nq; ++q) down_of.push_back(down.size());
          down.push_back({a, b, c, nq, {}, {}});
        }
      }

  parallel_for(down.size(), opt.jobs, [&](std::size_t i) {
    auto& job = down[i];
    const auto& filt = filters[job.filt];
    const ScaleRatio s = opt.scales[job.scale];
    try {
      const Downsampler fn = job.qp < nq ? filt.per_point(s, opt.qps[job.qp]) : filt.down;
      for (const auto& f : sequences[job.seq].frames) job.frames.push_back(quantize_8bit(fn(f, s)));
    } catch (const Error& e) {
      job.error = e.what();
    }
  });

  struct PointJob {
    std::optional<RDPoint> point;
    double seconds = 0;
    std::string error;
  };
  std::vector<PointJob> jobs(down_of.size());
  parallel_for(jobs.size(), opt.jobs, [&](std::size_t i) {
    const auto& dj = down[down_of[i]];
    const int qp = opt.qps[i % nq];
    if (!dj.error.empty()) {
      jobs[i].error = dj.error;
      return;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto& seq = sequences[dj.seq];
    CodecConfig c = opt.codec;
    c.qp = qp;
    c.qstep.reset();
    try {
      const auto res = encode_decode(dj.frames, c);
      std::vector<FramePlanar> up;
      for (const auto& r : res.recon) {
        auto u = resize_frame(r, seq.frames[0].width(), seq.frames[0].height(), ResizeFilter::kBicubic);
        up.push_back(seq.frames[0].layout == ChromaLayout::k420 ? convert_to_420(u) : convert_to_444(u));
      }
      const auto q = measure_sequence(seq.frames, up);
      RDPoint p;
      p.dataset = seq.dataset;
      p.sequence = seq.name;
      p.filter = filters[dj.filt].name;
      p.strategy = filters[dj.filt].strategy;
      p.scale = opt.scales[dj.scale];
      p.qp = qp;
      p.bits = res.bits;
      p.rate_bpp = static_cast<double>(res.bits) /
                   static_cast<double>(seq.frames[0].width() * seq.frames[0].height() * seq.frames.size());
      p.psnr_y = q.psnr_y;
      p.psnr_u = q.psnr_u;
      p.psnr_v = q.psnr_v;
      p.psnr_weighted = q.psnr_weighted;
      p.ssim_y = q.ssim_y;
      jobs[i].point = std::move(p);
    } catch (const Error& e) {
      jobs[i].error = e.what();
    }
    jobs[i].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  SweepResult out;
  out.encoder_version = codec_version(opt.codec);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& dj = down[down_of[i]];
    if (jobs[i].point) {
      out.points.push_back(std::move(*jobs[i].point));
      out.seconds.push_back(jobs[i].seconds);
    } else {
      out.failures.push_back({sequences[dj.seq].name, filters[dj.filt].name, filters[dj.filt].strategy,
                              opt.scales[dj.scale], opt.qps[i % nq], jobs[i].error});
    }
  }
  return out;
}

inline std::string describe(const SweepFailure& f) {
  return "sequence '" + f.sequence + "', filter " + f.filter + "/" + f.strategy + ", scale " + f.scale.str() +
         ", qp " + std::to_string(f.qp) + ": " + f.message;
}

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline void check_field(const std::string& s, const char* what) {
  if (s.find_first_of(",\n\r") != std::string::npos) {
    throw DomainError(std::string(what) + " '" + s + "' contains a comma or newline");
  }
}

inline double to_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw IoError(where + ": not a number: '" + s + "'");
  }
}

/// Table keyed by header name, one map per row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IoError("CSV is missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline Table parse(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw IoError("CSV line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                    " fields, expected " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw IoError("CSV is empty");
  return t;
}

}  // namespace csv

inline const std::vector<std::string>& rd_csv_columns() {
  static const std::vector<std::string> c{"dataset", "sequence", "filter",    "strategy",      "scale",
                                          "qp",      "bits",     "rate_bpp",  "psnr_y",        "psnr_u",
                                          "psnr_v",  "psnr_weighted", "ssim_y", "encoder"};
  return c;
}

/// Fixed columns, then imported score columns in name order.
inline std::string rd_points_to_csv(const std::vector<RDPoint>& points, const std::string& encoder_version) {
  std::set<std::string> extras;
  for (const auto& p : points)
    for (const auto& [k, v] : p.extra) extras.insert(k);
  std::string out;
  for (const auto& c : rd_csv_columns()) out += (out.empty() ? "" : ",") + c;
  for (const auto& e : extras) out += "," + e;
  out += "\n";
  csv::check_field(encoder_version, "encoder version");
  for (const auto& p : points) {
    for (const auto* s : {&p.dataset, &p.sequence, &p.filter, &p.strategy}) csv::check_field(*s, "name");
    out += p.dataset + "," + p.sequence + "," + p.filter + "," + p.strategy + "," + p.scale.str() + "," +
           std::to_string(p.qp) + "," + std::to_string(p.bits) + "," + csv::num(p.rate_bpp) + "," + csv::num(p.psnr_y) +
           "," + csv::num(p.psnr_u) + "," + csv::num(p.psnr_v) + "," + csv::num(p.psnr_weighted) + "," +
           csv::num(p.ssim_y) + "," + encoder_version;
    for (const auto& e : extras) {
      const auto it = p.extra.find(e);
      out += "," + (it == p.extra.end() ? std::string() : csv::num(it->second));
    }
    out += "\n";
  }
  return out;
}

inline std::vector<RDPoint> rd_points_from_csv(const std::string& text, std::string* encoder_version = nullptr) {
  const auto t = csv::parse(text);
  std::vector<std::size_t> idx;
  for (const auto& c : rd_csv_columns()) idx.push_back(t.col(c));
  std::vector<std::pair<std::string, std::size_t>> extras;
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (std::find(rd_csv_columns().begin(), rd_csv_columns().end(), t.header[i]) == rd_csv_columns().end())
      extras.emplace_back(t.header[i], i);
  std::vector<RDPoint> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = "RD CSV row " + std::to_string(r + 1);
    RDPoint p;
    p.dataset = row[idx[0]];
    p.sequence = row[idx[1]];
    p.filter = row[idx[2]];
    p.strategy = row[idx[3]];
    try {
      p.scale = ScaleRatio::parse(row[idx[4]]);
    } catch (const Error& e) {
      throw IoError(where + ": " + e.what());
    }
    p.qp = static_cast<int>(csv::to_double(row[idx[5]], where));
    p.bits = static_cast<std::uint64_t>(csv::to_double(row[idx[6]], where));
    p.rate_bpp = csv::to_double(row[idx[7]], where);
    p.psnr_y = csv::to_double(row[idx[8]], where);
    p.psnr_u = csv::to_double(row[idx[9]], where);
    p.psnr_v = csv::to_double(row[idx[10]], where);
    p.psnr_weighted = csv::to_double(row[idx[11]], where);
    p.ssim_y = csv::to_double(row[idx[12]], where);
    if (encoder_version) *encoder_version = row[idx[13]];
    for (const auto& [name, i] : extras)
      if (!row[i].empty()) p.extra[name] = csv::to_double(row[i], where);
    out.push_back(std::move(p));
  }
  return out;
}

/// Merges externally computed scores (e.g. VMAF) into matching points. The
/// CSV needs sequence, filter, strategy, scale and qp columns; every other
/// column is imported as a score under its header name. Returns the number
/// of rows applied; a row with no matching point is an error.
inline std::size_t import_scores(std::vector<RDPoint>& points, const std::string& text) {
  const auto t = csv::parse(text);
  const std::size_t cs = t.col("sequence"), cf = t.col("filter"), ct = t.col("strategy"), cc = t.col("scale"),
                    cq = t.col("qp");
  // An optional dataset column narrows the match when sequence names repeat.
  const auto dit = std::find(t.header.begin(), t.header.end(), "dataset");
  const std::size_t cd = dit == t.header.end() ? t.header.size() : static_cast<std::size_t>(dit - t.header.begin());
  std::size_t applied = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = "score CSV row " + std::to_string(r + 1);
    const auto scale = ScaleRatio::parse(row[cc]);
    const int qp = static_cast<int>(csv::to_double(row[cq], where));
    auto it = std::find_if(points.begin(), points.end(), [&](const RDPoint& p) {
      return p.sequence == row[cs] && p.filter == row[cf] && p.strategy == row[ct] && p.scale == scale && p.qp == qp &&
             (cd == t.header.size() || p.dataset == row[cd]);
    });
    if (it == points.end()) throw DomainError(where + " matches no RD point");
    for (std::size_t i = 0; i < t.header.size(); ++i) {
      if (i == cs || i == cf || i == ct || i == cc || i == cq || i == cd) continue;
      if (t.header[i].rfind("psnr_", 0) == 0 || t.header[i] == "ssim_y") {
        throw DomainError("imported score column '" + t.header[i] + "' would shadow a built-in metric");
      }
      it->extra[t.header[i]] = csv::to_double(row[i], where);
    }
    ++applied;
  }
  return applied;
}

// ---------------------------------------------------------------------------
// Report

struct SequenceBdbr {
  std::string dataset, sequence, filter, strategy, metric;
  std::optional<double> bd_br;  // empty when it could not be computed
  std::string note;
};

struct AverageBdbr {
  std::string dataset, filter, strategy, metric;
  double bd_br = 0;
  std::size_t sequences = 0;
  bool operator==(const AverageBdbr&) const = default;
};

struct Report {
  std::string reference = "lanczos";
  std::vector<SequenceBdbr> per_sequence;
  std::vector<AverageBdbr> averages;
};

/// BD-BR of every (filter, strategy) against the reference filter's hull for
/// each sequence and metric, then arithmetic means per dataset. Sequences
/// without reference points are an error.
inline Report report_table(const std::vector<RDPoint>& points, const std::vector<std::string>& metrics =
                                                                   builtin_quality_fields(),
                           const std::string& reference = "lanczos") {
  using Key = std::tuple<std::string, std::string, std::string, std::string>;  // dataset, sequence, filter, strategy
  std::map<Key, std::vector<RDPoint>> groups;
  std::set<std::pair<std::string, std::string>> sequences;
  for (const auto& p : points) {
    groups[{p.dataset, p.sequence, p.filter, p.strategy}].push_back(p);
    sequences.insert({p.dataset, p.sequence});
  }
  Report rep;
  rep.reference = reference;
  for (const auto& [ds, seq] : sequences) {
    const auto ref_it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) {
      return std::get<0>(g.first) == ds && std::get<1>(g.first) == seq && std::get<2>(g.first) == reference;
    });
    if (ref_it == groups.end()) {
      throw DomainError("no '" + reference + "' reference points for sequence '" + seq + "' in dataset '" + ds + "'");
    }
    for (const auto& [key, pts] : groups) {
      if (std::get<0>(key) != ds || std::get<1>(key) != seq || std::get<2>(key) == reference) continue;
      for (const auto& m : metrics) {
        SequenceBdbr e{ds, seq, std::get<2>(key), std::get<3>(key), m, std::nullopt, ""};
        try {
          e.bd_br = bd_br(convex_hull(ref_it->second, m), convex_hull(pts, m));
        } catch (const DomainError& err) {
          e.note = err.what();
        }
        rep.per_sequence.push_back(std::move(e));
      }
    }
  }
  std::map<Key, std::pair<double, std::size_t>> acc;  // dataset, filter, strategy, metric
  for (const auto& e : rep.per_sequence) {
    auto& a = acc[{e.dataset, e.filter, e.strategy, e.metric}];
    if (e.bd_br) {
      a.first += *e.bd_br;
      ++a.second;
    }
  }
  for (const auto& [k, v] : acc) {
    rep.averages.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k),
                            v.second ? v.first / static_cast<double>(v.second) : std::nan(""), v.second});
  }
  return rep;
}

inline std::string report_to_csv(const Report& r) {
  std::string out = "dataset,filter,strategy,metric,bd_br_percent,sequences\n";
  for (const auto& a : r.averages) {
    out += a.dataset + "," + a.filter + "," + a.strategy + "," + a.metric + "," + csv::num(a.bd_br) + "," +
           std::to_string(a.sequences) + "\n";
  }
  return out;
}

inline std::vector<AverageBdbr> report_from_csv(const std::string& text) {
  const auto t = csv::parse(text);
  const std::size_t cd = t.col("dataset"), cf = t.col("filter"), cs = t.col("strategy"), cm = t.col("metric"),
                    cb = t.col("bd_br_percent"), cn = t.col("sequences");
  std::vector<AverageBdbr> out;
  for (const auto& row : t.rows) {
    out.push_back({row[cd], row[cf], row[cs], row[cm], csv::to_double(row[cb], "report CSV"),
                   static_cast<std::size_t>(csv::to_double(row[cn], "report CSV"))});
  }
  return out;
}

inline std::string per_sequence_to_csv(const Report& r) {
  std::string out = "dataset,sequence,filter,strategy,metric,bd_br_percent,note\n";
  for (const auto& e : r.per_sequence) {
    std::string note = e.note;
    std::replace(note.begin(), note.end(), ',', ';');
    out += e.dataset + "," + e.sequence + "," + e.filter + "," + e.strategy + "," + e.metric + "," +
           (e.bd_br ? csv::num(*e.bd_br) : "nan") + "," + note + "\n";
  }
  return out;
}

/// Aligned plain-text table: one row per (dataset, filter, strategy), one
/// column per metric.
inline std::string report_to_text(const Report& r) {
  std::vector<std::string> metrics;
  for (const auto& a : r.averages)
    if (std::find(metrics.begin(), metrics.end(), a.metric) == metrics.end()) metrics.push_back(a.metric);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"dataset", "filter", "strategy"};
  for (const auto& m : metrics) head.push_back("BD-BR " + m);
  head.push_back("sequences");
  rows.push_back(head);
  std::map<std::tuple<std::string, std::string, std::string>, std::map<std::string, const AverageBdbr*>> table;
  for (const auto& a : r.averages) table[{a.dataset, a.filter, a.strategy}][a.metric] = &a;
  for (const auto& [k, cells] : table) {
    std::vector<std::string> row{std::get<0>(k), std::get<1>(k), std::get<2>(k)};
    std::size_t n = 0;
    for (const auto& m : metrics) {
      const auto it = cells.find(m);
      if (it == cells.end() || !std::isfinite(it->second->bd_br)) {
        row.push_back("n/a");
        continue;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%+.2f%%", it->second->bd_br);
      row.push_back(buf);
      n = std::max(n, it->second->sequences);
    }
    row.push_back(std::to_string(n));
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::string out = "BD-BR against the " + r.reference + " convex hull (negative = fewer bits)\n";
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (std::size_t i = 0; i < rows[j].size(); ++i) {
      const auto& cell = rows[j][i];
      const std::string pad(width[i] - cell.size(), ' ');
      out += (i < 3 ? cell + pad : pad + cell) + (i + 1 < rows[j].size() ? "  " : "");
    }
    out += "\n";
    if (j == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out += std::string(total - 2, '-') + "\n";
    }
  }
  return out;
}

/// Plot-ready R-D curves: one CSV per (dataset, sequence, filter, strategy)
/// with every point and its hull membership per metric. Returns the files
/// written.
inline std::vector<std::filesystem::path> write_curves(const std::vector<RDPoint>& points,
                                                       const std::filesystem::path& dir,
                                                       const std::vector<std::string>& metrics =
                                                           builtin_quality_fields()) {
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::map<Key, std::vector<RDPoint>> groups;
  for (const auto& p : points) groups[{p.dataset, p.sequence, p.filter, p.strategy}].push_back(p);
  std::vector<std::filesystem::path> written;
  for (const auto& [k, pts] : groups) {
    std::vector<std::set<std::pair<std::string, int>>> on_hull;
    for (const auto& m : metrics) {
      std::set<std::pair<std::string, int>> s;
      for (const auto& p : convex_hull(pts, m).points) s.insert({p.scale.str(), p.qp});
      on_hull.push_back(std::move(s));
    }
    std::string text = "scale,qp,rate_bpp";
    for (const auto& m : metrics) text += "," + m;
    for (const auto& m : metrics) text += ",hull_" + m;
    text += "\n";
    auto sorted = pts;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const RDPoint& a, const RDPoint& b) { return a.rate_bpp < b.rate_bpp; });
    for (const auto& p : sorted) {
      text += p.scale.str() + "," + std::to_string(p.qp) + "," + csv::num(p.rate_bpp);
      for (const auto& m : metrics) text += "," + csv::num(quality_of(p, m));
      for (const auto& h : on_hull) text += h.count({p.scale.str(), p.qp}) ? ",1" : ",0";
      text += "\n";
    }
    const auto path = dir / std::get<0>(k) / std::get<1>(k) / (std::get<2>(k) + "-" + std::get<3>(k) + ".csv");
    std::filesystem::create_directories(path.parent_path());
    write_bytes_atomic(path, text);
    written.push_back(path);
  }
  return written;
}

}  // namespace scaled
