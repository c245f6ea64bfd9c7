#pragma once

// Self-verification suites behind `scaled verify`. Each suite carries its own
// reference computation and needs no external codec.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "scaled/codec.hpp"
#include "scaled/eval.hpp"
#include "scaled/gradcheck.hpp"
#include "scaled/model.hpp"
#include "scaled/rateproxy.hpp"
#include "scaled/surrogate.hpp"
#include "scaled/synthetic.hpp"

namespace scaled {

/// The operation whose backward is checked against the explicit surrogate
/// Jacobian. Replaceable so that a broken variant can be shown to fail.
using JacobianOp = std::function<Tensor<double>(Tape<double>&, const Tensor<double>& y, const Tensor<double>& recon)>;

inline JacobianOp default_jacobian_op() {
  return [](Tape<double>& t, const Tensor<double>& y, const Tensor<double>& recon) {
    return scaled_apply(t, y, recon, SurrogateConfig{});
  };
}

struct VerifyOptions {
  JacobianOp jacobian_op = default_jacobian_op();
  std::size_t jacobian_instances = 100;
  std::size_t forward_frames = 100;
  std::size_t gradcheck_instances = 20;
  std::size_t hull_trials = 1000;
  std::size_t determinism_runs = 10;
  std::uint64_t seed = 1;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::size_t cases = 0;
  std::string detail;
  double seconds = 0;
};

namespace verify {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Explicit surrogate Jacobian for a single sigma group, applied as g^T J.
inline std::vector<double> explicit_vjp(const std::vector<double>& eps, const std::vector<double>& g) {
  const std::size_t n = eps.size();
  double mean = 0, var = 0;
  for (double e : eps) mean += e;
  mean /= static_cast<double>(n);
  for (double e : eps) var += (e - mean) * (e - mean);
  var /= static_cast<double>(n);
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double j = (r == c ? 1.0 : 0.0) - eps[r] * (eps[c] - mean) / (static_cast<double>(n) * var);
      out[c] += g[r] * j;
    }
  return out;
}

inline SuiteResult jacobian(const VerifyOptions& o) {
  SuiteResult r{"jacobian", true, 0, "", 0};
  CounterRng rng(o.seed, 1);
  const std::size_t sides[] = {2, 4, 8, 16};  // N = 4, 16, 64, 256
  double worst = 0;
  while (r.cases < o.jacobian_instances) {
    const std::size_t side = sides[r.cases % 4], n = side * side;
    Plane p(side, side);
    for (auto& v : p.samples) v = static_cast<float>(rng.uniform(0.1, 0.9));
    const auto rec = toy::code_plane(p, rng.uniform(2, 24) / 255);
    const Tensor<double> y(Shape{1, 1, side, side}, std::vector<double>(p.samples.begin(), p.samples.end()));
    const Tensor<double> recon(y.shape(), std::vector<double>(rec.recon.samples.begin(), rec.recon.samples.end()));
    std::vector<double> eps(n);
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < n; ++i) {
      eps[i] = recon[i] - y[i];
      lo = std::min(lo, eps[i]);
      hi = std::max(hi, eps[i]);
    }
    if (hi - lo < 1e-9) continue;  // constant error: the formula does not apply
    for (int k = 0; k < 3; ++k) {
      std::vector<double> g(n);
      for (auto& v : g) v = rng.uniform(-1, 1);
      Tape<double> tape;
      const auto leaf = tape.leaf(y);
      const auto out = o.jacobian_op(tape, leaf, recon);
      const auto got = tape.backward(sum(tape, mul(tape, out, Tensor<double>(out.shape(), g)))).of(leaf);
      const auto want = explicit_vjp(eps, g);
      double num = 0, den = 1e-12;
      for (std::size_t i = 0; i < n; ++i) {
        num = std::max(num, std::abs(got[i] - want[i]));
        den = std::max(den, std::abs(want[i]));
      }
      worst = std::max(worst, num / den);
    }
    ++r.cases;
  }
  r.passed = worst < 1e-6;
  r.detail = "max relative error " + fmt("%.3g", worst) + " (limit 1e-6)";
  return r;
}

/// Forward value of both surrogate modes equals the codec output bit for bit.
inline SuiteResult forward_exactness(const VerifyOptions& o, const std::vector<CodecConfig>& codecs) {
  SuiteResult r{"forward", true, 0, "", 0};
  std::size_t mismatches = 0;
  for (const auto& c : codecs) {
    for (std::size_t i = 0; i < o.forward_frames; ++i) {
      const auto f = synthetic_frame(16, 16, o.seed * 7919 + i);
      const auto res = encode_decode({f}, c);
      const auto want = frames_to_tensor<float>(res.recon);
      for (auto mode : {SurrogateMode::kSte, SurrogateMode::kScaled}) {
        Tape<float> tape;
        SurrogateDiagnostics d;
        const auto y = tape.leaf(frames_to_tensor<float>({f}));
        if (apply(tape, y, want, SurrogateConfig{mode}, d).values() != want.values()) ++mismatches;
        ++r.cases;
      }
    }
  }
  r.passed = mismatches == 0;
  r.detail = std::to_string(mismatches) + " mismatching outputs over " + std::to_string(codecs.size()) + " backend(s)";
  return r;
}

inline SuiteResult gradchecks(const VerifyOptions& o) {
  SuiteResult r{"gradcheck", true, 0, "", 0};
  using Fn = std::function<GradcheckResult(CounterRng&, std::uint64_t)>;
  auto sq = [](Tape<double>& t, const Tensor<double>& x) { return sum(t, mul(t, x, x)); };
  const ModelConfig mc{.hidden = 2, .layers = 2};
  const std::vector<std::pair<std::string, Fn>> cases{
      {"conv2d",
       [](CounterRng& g, std::uint64_t s) {
         const auto tgt = random_tensor(Shape{1, 2, 6, 6}, g);
         return gradcheck(
             [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
               return mse(t, conv2d(t, in[0], in[1], in[2], 1), tgt);
             },
             {random_tensor(Shape{1, 3, 6, 6}, g), random_tensor(Shape{2, 3, 3, 3}, g), random_tensor(Shape{2}, g)},
             1e-5, 32, s);
       }},
      {"leaky_relu",
       [](CounterRng& g, std::uint64_t s) {
         return gradcheck(
             [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
               return sum(t, mul(t, leaky_relu(t, in[0], 0.1), in[0]));
             },
             {random_tensor(Shape{24}, g)}, 1e-5, 32, s);
       }},
      {"mse",
       [](CounterRng& g, std::uint64_t s) {
         return gradcheck([](Tape<double>& t, const std::vector<Tensor<double>>& in) { return mse(t, in[0], in[1]); },
                          {random_tensor(Shape{3, 5}, g), random_tensor(Shape{3, 5}, g)}, 1e-5, 32, s);
       }},
      {"std_dev",
       [](CounterRng& g, std::uint64_t s) {
         return gradcheck([](Tape<double>& t, const std::vector<Tensor<double>>& in) { return std_dev(t, in[0]); },
                          {random_tensor(Shape{17}, g)}, 1e-5, 32, s);
       }},
      {"bilinear_down",
       [&](CounterRng& g, std::uint64_t s) {
         const auto sc = default_evaluation_scales()[s % 6];
         return gradcheck(
             [&](Tape<double>& t, const std::vector<Tensor<double>>& in) { return sq(t, bilinear_downsample(t, in[0], sc)); },
             {random_tensor(Shape{1, 2, 15, 20}, g)}, 1e-5, 32, s);
       }},
      {"bicubic_up",
       [&](CounterRng& g, std::uint64_t s) {
         return gradcheck(
             [&](Tape<double>& t, const std::vector<Tensor<double>>& in) { return sq(t, bicubic_upsample(t, in[0], 13, 16)); },
             {random_tensor(Shape{1, 2, 5, 7}, g)}, 1e-5, 32, s);
       }},
      {"lanczos",
       [&](CounterRng& g, std::uint64_t s) {
         return gradcheck(
             [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
               return sq(t, resample2d(t, in[0], lanczos_axis(14, 6), lanczos_axis(18, 9)));
             },
             {random_tensor(Shape{1, 1, 14, 18}, g)}, 1e-5, 32, s);
       }},
      {"block_dct",
       [&](CounterRng& g, std::uint64_t s) {
         return gradcheck(
             [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
               const auto c = block_dct2d(t, in[0]);
               return sum(t, mul(t, c, in[1]));
             },
             {random_tensor(Shape{1, 1, 10, 13}, g), random_tensor(Shape{1, 1, 16, 16}, g)}, 1e-5, 32, s);
       }},
      {"soft_l0",
       [](CounterRng& g, std::uint64_t s) {
         return gradcheck([](Tape<double>& t, const std::vector<Tensor<double>>& in) { return soft_l0(t, in[0], 0.3); },
                          {random_tensor(Shape{40}, g)}, 1e-5, 32, s);
       }},
      {"model_loss",
       [&](CounterRng& g, std::uint64_t s) {
         const auto m = init_params(s, mc).cast<double>();
         const auto x = random_tensor(Shape{1, 3, 8, 8}, g, 0, 1);
         const RateProxyParams p{.tau = 0.1, .a = 1, .b = 0};
         std::vector<Tensor<double>> probe{m.tensors.front(), m.tensors[m.tensors.size() - 2]};
         return gradcheck(
             [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
               auto params = m.tensors;
               params.front() = in[0];
               params[params.size() - 2] = in[1];
               const auto y = forward<double>(t, x, params, mc, ScaleRatio(1, 2));
               return add(t, mse(t, bicubic_upsample(t, y, 8, 8), x), affine(t, rate_estimate(t, y, p), 1e-3));
             },
             probe, 1e-5, 24, s);
       }},
  };
  std::string failed;
  double worst = 0;
  for (const auto& [name, fn] : cases) {
    double local = 0;
    for (std::size_t i = 0; i < o.gradcheck_instances; ++i) {
      const std::uint64_t s = o.seed * 1000 + i + 1;
      CounterRng g(s, 2);
      local = std::max(local, fn(g, s).max_rel_error);
      ++r.cases;
    }
    worst = std::max(worst, local);
    if (!(local < 1e-4)) failed += (failed.empty() ? "" : ", ") + name + " " + fmt("%.3g", local);
  }
  r.passed = failed.empty();
  r.detail = std::to_string(cases.size()) + " primitives, max relative error " + fmt("%.3g", worst) +
             (failed.empty() ? "" : "; failing: " + failed);
  return r;
}

inline SuiteResult bdbr_analytic(const VerifyOptions&) {
  SuiteResult r{"bdbr", true, 0, "", 0};
  const std::vector<std::pair<double, double>> base{{0.02, 30.1}, {0.045, 33.0}, {0.09, 35.7},
                                                    {0.2, 38.2},  {0.41, 40.0},  {0.9, 42.5}};
  auto hull = [&](double k) {
    std::vector<RDPoint> pts;
    for (auto [rate, q] : base) {
      RDPoint p;
      p.rate_bpp = rate * k;
      p.psnr_y = q;
      pts.push_back(p);
    }
    return convex_hull(pts);
  };
  const auto ref = hull(1.0);
  const double same = bd_br(ref, ref), up = bd_br(ref, hull(1.1)), down = bd_br(ref, hull(0.5));
  r.cases = 3;
  r.passed = same == 0.0 && std::abs(up - 10.0) <= 0.1 && std::abs(down + 50.0) <= 0.1;
  r.detail = "identical " + fmt("%.3f%%", same) + ", x1.1 " + fmt("%+.3f%%", up) + ", x0.5 " + fmt("%+.3f%%", down);
  return r;
}

/// Brute-force upper hull: Pareto survivors not strictly below any chord.
inline std::vector<Vec2> hull_oracle(const std::vector<Vec2>& pts) {
  std::vector<Vec2> uniq, pareto, hull;
  for (const auto& p : pts)
    if (std::find(uniq.begin(), uniq.end(), p) == uniq.end()) uniq.push_back(p);
  for (const auto& p : uniq) {
    bool dominated = false;
    for (const auto& q : uniq) dominated |= !(q == p) && q.x <= p.x && q.y >= p.y;
    if (!dominated) pareto.push_back(p);
  }
  for (const auto& p : pareto) {
    bool below = false;
    for (const auto& a : pareto)
      for (const auto& b : pareto)
        if (a.x < p.x && p.x < b.x) below |= (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < 0;
    if (!below) hull.push_back(p);
  }
  std::sort(hull.begin(), hull.end(), [](const Vec2& a, const Vec2& b) { return a.x < b.x; });
  return hull;
}

inline SuiteResult hull_oracle_suite(const VerifyOptions& o) {
  SuiteResult r{"hull", true, 0, "", 0};
  CounterRng rng(o.seed, 3);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < o.hull_trials; ++t) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<Vec2> pts;
    for (std::size_t i = 0; i < n; ++i)
      pts.push_back({static_cast<double>(1 + rng.below(10)), static_cast<double>(rng.below(10))});
    std::vector<Vec2> got;
    for (auto i : hull_indices(pts)) got.push_back(pts[i]);
    bad += got != hull_oracle(pts);
    ++r.cases;
  }
  r.passed = bad == 0;
  r.detail = std::to_string(bad) + " mismatches against the exhaustive oracle";
  return r;
}

inline SuiteResult toy_determinism(const VerifyOptions& o) {
  SuiteResult r{"determinism", true, 0, "", 0};
  const auto frames = synthetic_sequence(40, 24, 3, o.seed);
  const auto first = toy_encode_decode(frames, 5.0 / 255);
  std::size_t bad = 0;
  for (std::size_t i = 1; i < o.determinism_runs; ++i) {
    const auto again = toy_encode_decode(frames, 5.0 / 255);
    bad += again.bits != first.bits || again.recon != first.recon;
    ++r.cases;
  }
  r.passed = bad == 0;
  r.detail = std::to_string(o.determinism_runs) + " runs, " + std::to_string(first.bits) + " bits each" +
             (bad ? ", " + std::to_string(bad) + " differ" : "");
  return r;
}

template <class Fn>
SuiteResult timed(Fn fn) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  try {
    r = fn();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("threw: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace verify

inline std::vector<SuiteResult> run_verify(const VerifyOptions& o = {}) {
  CodecConfig toy;
  toy.qstep = 6.0 / 255;
  std::vector<SuiteResult> out;
  out.push_back(verify::timed([&] { return verify::jacobian(o); }));
  out.back().name = "jacobian";
  out.push_back(verify::timed([&] { return verify::forward_exactness(o, {toy}); }));
  out.back().name = "forward";
  out.push_back(verify::timed([&] { return verify::gradchecks(o); }));
  out.back().name = "gradcheck";
  out.push_back(verify::timed([&] { return verify::bdbr_analytic(o); }));
  out.back().name = "bdbr";
  out.push_back(verify::timed([&] { return verify::hull_oracle_suite(o); }));
  out.back().name = "hull";
  out.push_back(verify::timed([&] { return verify::toy_determinism(o); }));
  out.back().name = "determinism";
  return out;
}

inline std::string format_suite(const SuiteResult& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2fs", r.seconds);
  return std::string(r.passed ? "PASS " : "FAIL ") + r.name + " (" + std::to_string(r.cases) + " cases, " + buf +
         "): " + r.detail;
}

}  // namespace scaled
