#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "scaled/gradcheck.hpp"
#include "scaled/resample.hpp"
#include "scaled/synthetic.hpp"

using namespace scaled;

namespace {

// Reference kernels written out directly, not shared with the library.
double ref_keys(double x) {
  x = std::abs(x);
  if (x < 1) return 1.5 * x * x * x - 2.5 * x * x + 1;
  if (x < 2) return -0.5 * x * x * x + 2.5 * x * x - 4 * x + 2;
  return 0;
}

double ref_lanczos3(double x) {
  if (x == 0) return 1;
  if (std::abs(x) >= 3) return 0;
  const double px = std::numbers::pi * x;
  return 3 * std::sin(px) * std::sin(px / 3) / (px * px);
}

Tensor<double> ramp4x4() {
  std::vector<double> v(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) v[r * 4 + c] = 4 * r + c;
  return Tensor<double>(Shape{1, 1, 4, 4}, v);
}

}  // namespace

TEST(ScaleRatio, ParseAndReduce) {
  EXPECT_EQ(ScaleRatio::parse("2/4"), ScaleRatio(1, 2));
  EXPECT_EQ(ScaleRatio::parse("1"), ScaleRatio(1, 1));
  EXPECT_THROW(ScaleRatio::parse("x/2"), DomainError);
  EXPECT_THROW(ScaleRatio(0, 3), DomainError);
}

TEST(ScaleRatio, EvenFloorDims) {
  const std::vector<std::pair<std::size_t, std::size_t>> dims{{1920, 1080}, {64, 64}};
  for (auto s : default_evaluation_scales()) {
    for (auto [w, h] : dims) {
      const std::size_t ew = static_cast<std::size_t>(std::floor(static_cast<double>(w) * s.num / s.den));
      EXPECT_EQ(s.scaled_dim(w), ew - ew % 2) << s.str();
      EXPECT_EQ(s.scaled_dim(h) % 2, 0u);
    }
  }
  EXPECT_EQ(ScaleRatio(2, 3).scaled_dim(1080), 720u);
  EXPECT_EQ(ScaleRatio(1, 5).scaled_dim(64), 12u);
  EXPECT_THROW(ScaleRatio(1, 5).scaled_dim(9), ShapeError);
}

TEST(BilinearDownsample, IdentityAtScaleOne) {
  Tape<double> tape;
  CounterRng rng(1);
  const auto x = random_tensor(Shape{2, 3, 6, 8}, rng);
  EXPECT_EQ(bilinear_downsample(tape, x, ScaleRatio(1, 1)).values(), x.values());
}

TEST(BilinearDownsample, HandComputedRamp) {
  Tape<double> tape;
  const auto y = bilinear_downsample(tape, ramp4x4(), ScaleRatio(1, 2));
  // Sample centers land on source coordinates 0.5 and 2.5 in both axes.
  const std::vector<double> expect{2.5, 4.5, 10.5, 12.5};
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);
}

TEST(BilinearDownsample, RejectsUpscale) {
  Tape<double> tape;
  EXPECT_THROW(bilinear_downsample(tape, ramp4x4(), ScaleRatio(3, 2)), DomainError);
}

TEST(BicubicUpsample, IdentityAtSameSize) {
  Tape<double> tape;
  const auto x = ramp4x4();
  const auto y = bicubic_upsample(tape, x, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
}

TEST(BicubicUpsample, MatchesScalarKernelSum) {
  Tape<double> tape;
  const Tensor<double> x(Shape{1, 1, 2, 2}, {0.1, 0.9, 0.4, 0.2});
  const auto y = bicubic_upsample(tape, x, 4, 4);
  auto px = [&](int r, int c) {
    r = std::clamp(r, 0, 1);
    c = std::clamp(c, 0, 1);
    return x[static_cast<std::size_t>(r * 2 + c)];
  };
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double sr = (i + 0.5) / 2 - 0.5, sc = (j + 0.5) / 2 - 0.5;
      double acc = 0;
      for (int r = -3; r <= 3; ++r)
        for (int c = -3; c <= 3; ++c) acc += ref_keys(sr - r) * ref_keys(sc - c) * px(r, c);
      EXPECT_NEAR(y[static_cast<std::size_t>(i * 4 + j)], acc, 1e-12) << i << "," << j;
    }
}

TEST(BicubicUpsample, RejectsDownscale) {
  Tape<double> tape;
  EXPECT_THROW(bicubic_upsample(tape, ramp4x4(), 2, 4), ShapeError);
}

TEST(Resample, ConstantsPreservedByEveryFilter) {
  Tape<double> tape;
  const auto x = Tensor<double>::filled(Shape{1, 2, 60, 90}, 0.37);
  for (auto s : default_evaluation_scales()) {
    const auto down = bilinear_downsample(tape, x, s);
    for (double v : down.data()) EXPECT_NEAR(v, 0.37, 1e-12);
    const auto up = bicubic_upsample(tape, down, 60, 90);
    for (double v : up.data()) EXPECT_NEAR(v, 0.37, 1e-12);
  }
  const FramePlanar f(60, 90, ChromaLayout::k444, 0.37f, 0.61f);
  for (auto filter : {ResizeFilter::kBilinear, ResizeFilter::kBicubic, ResizeFilter::kLanczos}) {
    for (auto [w, h] : std::vector<std::pair<std::size_t, std::size_t>>{{24, 36}, {120, 180}, {34, 50}}) {
      const auto r = resize_frame(f, w, h, filter);
      for (float v : r.y.samples) EXPECT_NEAR(v, 0.37f, 1e-5f);
      for (float v : r.u.samples) EXPECT_NEAR(v, 0.61f, 1e-5f);
    }
  }
}

TEST(Resample, GradcheckDownAndUp) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CounterRng rng(seed);
    const auto s = default_evaluation_scales()[seed % 6];
    const auto x = random_tensor(Shape{1, 2, 15, 20}, rng);
    const auto r1 = gradcheck(
        [&](Tape<double>& t, const std::vector<Tensor<double>>& in) {
          const auto d = bilinear_downsample(t, in[0], s);
          return sum(t, mul(t, d, d));
        },
        {x});
    EXPECT_LT(r1.max_rel_error, 1e-4) << "down " << s.str();
    const auto small = random_tensor(Shape{1, 2, 5, 7}, rng);
    const auto r2 = gradcheck(
        [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
          const auto u = bicubic_upsample(t, in[0], 13, 16);
          return sum(t, mul(t, u, u));
        },
        {small});
    EXPECT_LT(r2.max_rel_error, 1e-4) << "up";
  }
}

TEST(Resample, TransposeIsAdjoint) {
  // <A x, g> == <x, A^T g> for the sparse tables used by the tape.
  CounterRng rng(4);
  const auto rows = bicubic_axis(7, 17), cols = lanczos_axis(30, 11);
  const auto x = random_tensor(Shape{7 * 30}, rng), g = random_tensor(Shape{17 * 11}, rng);
  const auto ax = resample_plane<double>(x.data(), rows, cols);
  std::vector<double> atg(7 * 30, 0.0);
  resample_plane_transposed<double>(g.data(), atg, rows, cols);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < ax.size(); ++i) lhs += ax[i] * g[i];
  for (std::size_t i = 0; i < atg.size(); ++i) rhs += x[i] * atg[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(LanczosResize, IdentityAtScaleOne) {
  const auto f = synthetic_frame(32, 24, 7);
  const auto r = lanczos_resize(f, ScaleRatio(1, 1));
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < f.plane(p).samples.size(); ++i)
      EXPECT_NEAR(r.plane(p).samples[i], f.plane(p).samples[i], 1e-6f);
}

TEST(LanczosResize, ImpulseResponseIsNormalizedTaps) {
  FramePlanar f(48, 48, ChromaLayout::k444, 0.0f, 0.0f);
  const std::size_t ci = 23;
  f.y.at(ci, ci) = 1.0f;
  const auto r = lanczos_resize(f, ScaleRatio(1, 2));
  ASSERT_EQ(r.width(), 24u);
  // Taps of output j over source i: L3((i + 0.5 - c_j) / 2), c_j = 2 (j + 0.5).
  auto tap = [](std::size_t j, std::size_t i) {
    const double c = 2.0 * (static_cast<double>(j) + 0.5);
    double total = 0;
    for (int k = -12; k <= 12; ++k) total += ref_lanczos3((std::floor(c) + k + 0.5 - c) / 2);
    return ref_lanczos3((static_cast<double>(i) + 0.5 - c) / 2) / total;
  };
  for (std::size_t j = 6; j < 18; ++j)
    for (std::size_t k = 6; k < 18; ++k) EXPECT_NEAR(r.y.at(k, j), tap(j, ci) * tap(k, ci), 1e-6) << j << "," << k;
}
