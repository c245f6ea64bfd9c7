#include <gtest/gtest.h>

#include <cmath>

#include "scaled/codec.hpp"
#include "scaled/gradcheck.hpp"
#include "scaled/surrogate.hpp"
#include "scaled/synthetic.hpp"

using namespace scaled;

namespace {

using Matrix = std::vector<std::vector<double>>;

// Explicit I - eps (eps - mean)^T / (N sigma^2), built from scratch.
Matrix explicit_jacobian(const std::vector<double>& eps) {
  const std::size_t n = eps.size();
  double mean = 0;
  for (double e : eps) mean += e;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double e : eps) var += (e - mean) * (e - mean);
  var /= static_cast<double>(n);
  Matrix j(n, std::vector<double>(n));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      j[r][c] = (r == c ? 1.0 : 0.0) - eps[r] * (eps[c] - mean) / (static_cast<double>(n) * var);
  return j;
}

// Vector-Jacobian product g^T J, the quantity reverse mode must produce.
std::vector<double> vjp(const Matrix& j, const std::vector<double>& g) {
  std::vector<double> out(j.size(), 0.0);
  for (std::size_t r = 0; r < j.size(); ++r)
    for (std::size_t c = 0; c < j.size(); ++c) out[c] += g[r] * j[r][c];
  return out;
}

// Backward of `op` for cotangent g: gradient of sum(g * op(y)).
template <class Op>
std::vector<double> tape_vjp(Op op, const Tensor<double>& y0, const Tensor<double>& recon, const std::vector<double>& g) {
  Tape<double> tape;
  const auto y = tape.leaf(y0);
  const auto out = op(tape, y, recon);
  return tape.backward(sum(tape, mul(tape, out, Tensor<double>(out.shape(), g)))).of(y);
}

Tensor<double> round_to(const Tensor<double>& y, double step) {
  std::vector<double> v(y.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::round(y[i] / step) * step;
  return Tensor<double>(y.shape(), v);
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / std::max(den, 1e-12);
}

auto scaled_op = [](Tape<double>& t, const Tensor<double>& y, const Tensor<double>& r) {
  return scaled_apply(t, y, r, SurrogateConfig{});
};
auto ste_op = [](Tape<double>& t, const Tensor<double>& y, const Tensor<double>& r) { return ste_apply(t, y, r); };

}  // namespace

TEST(Ste, ForwardIsReconBackwardIsIdentity) {
  CounterRng rng(1);
  const auto y = random_tensor(Shape{2, 3, 4, 4}, rng, 0, 1);
  const auto recon = round_to(y, 0.1);
  Tape<double> tape;
  EXPECT_EQ(ste_apply(tape, y, recon).values(), recon.values());
  const auto g = random_tensor(Shape{2, 3, 4, 4}, rng).values();
  EXPECT_EQ(tape_vjp(ste_op, y, recon, g), g);
  // Gradient does not depend on the compression error.
  EXPECT_EQ(tape_vjp(ste_op, y, round_to(y, 0.3), g), g);
}

TEST(Scaled, ForwardIsReconBitExact) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto f = synthetic_frame(16, 16, seed);
    const auto res = toy_encode_decode({f}, 6.0 / 255);
    Tape<float> tape;
    const auto y = tape.leaf(frames_to_tensor<float>({f}));
    const auto out = scaled_apply(tape, y, res, SurrogateConfig{});
    EXPECT_EQ(out.values(), frames_to_tensor<float>(res.recon).values());
    SurrogateDiagnostics d;
    EXPECT_EQ(apply(tape, y, res, {SurrogateMode::kSte}, d).values(), out.values());
  }
}

TEST(Scaled, HandExampleN4) {
  const Tensor<double> y(Shape{4}, {0.1, 0.2, 0.3, 0.4});
  const auto recon = round_to(y, 0.25);
  EXPECT_EQ(recon.values(), (std::vector<double>{0.0, 0.25, 0.25, 0.5}));
  // eps = [-0.1, 0.05, -0.05, 0.1], mean 0, sigma^2 = 0.025 / 4.
  const std::vector<double> eps{-0.1, 0.05, -0.05, 0.1};
  const auto jac = explicit_jacobian(eps);
  EXPECT_NEAR(jac[0][0], 1 - 0.01 / 0.025, 1e-12);
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> e(4, 0.0);
    e[k] = 1.0;
    const auto got = tape_vjp(scaled_op, y, recon, e);
    const auto want = vjp(jac, e);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], want[i], 1e-6) << k << "," << i;
  }
}

TEST(Scaled, RandomInstancesMatchExplicitJacobian) {
  CounterRng rng(77);
  for (std::size_t n : {4u, 16u, 64u, 256u}) {
    for (int rep = 0; rep < 10; ++rep) {
      const auto y = random_tensor(Shape{n}, rng, 0, 1);
      const auto recon = round_to(y, rng.uniform(0.05, 0.3));
      auto eps = recon.values();
      for (std::size_t i = 0; i < n; ++i) eps[i] -= y[i];
      const auto g = random_tensor(Shape{n}, rng).values();
      EXPECT_LT(rel_err(tape_vjp(scaled_op, y, recon, g), vjp(explicit_jacobian(eps), g)), 1e-6) << "N=" << n;
    }
  }
}

TEST(Scaled, ConstantErrorGivesIdentity) {
  CounterRng rng(3);
  // Dyadic samples keep recon - y exactly constant.
  std::vector<double> yv(16), rv(16);
  for (std::size_t i = 0; i < 16; ++i) {
    yv[i] = static_cast<double>(rng.below(64)) / 64;
    rv[i] = yv[i] + 0.125;
  }
  const Tensor<double> y(Shape{16}, yv), recon(Shape{16}, rv);
  const auto g = random_tensor(Shape{16}, rng).values();
  const auto got = tape_vjp(scaled_op, y, recon, g);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(got[i], g[i]);
}

TEST(Scaled, CotangentOrthogonalToErrorPassesThrough) {
  CounterRng rng(5);
  const auto y = random_tensor(Shape{8}, rng, 0, 1);
  const auto recon = round_to(y, 0.2);
  std::vector<double> eps(8), g = random_tensor(Shape{8}, rng).values();
  double ee = 0, eg = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    eps[i] = recon[i] - y[i];
    ee += eps[i] * eps[i];
    eg += eps[i] * g[i];
  }
  for (std::size_t i = 0; i < 8; ++i) g[i] -= eg / ee * eps[i];
  const auto got = tape_vjp(scaled_op, y, recon, g);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(got[i], g[i], 1e-12);
}

TEST(Scaled, ErrorDirectionIsAnnihilated) {
  // J eps = eps - eps (eps - mean)^T eps / (N sigma^2) = 0.
  CounterRng rng(9);
  const std::size_t n = 12;
  const auto y = random_tensor(Shape{n}, rng, 0, 1);
  const auto recon = round_to(y, 0.3);
  std::vector<double> eps(n);
  for (std::size_t i = 0; i < n; ++i) eps[i] = recon[i] - y[i];
  std::vector<double> j_eps(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> e(n, 0.0);
    e[r] = 1.0;
    const auto row = tape_vjp(scaled_op, y, recon, e);  // row r of J
    for (std::size_t c = 0; c < n; ++c) j_eps[r] += row[c] * eps[c];
  }
  for (double v : j_eps) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Scaled, BackwardDiffersFromSte) {
  CounterRng rng(2);
  const auto y = random_tensor(Shape{32}, rng, 0, 1);
  const auto recon = round_to(y, 0.2);
  const auto g = random_tensor(Shape{32}, rng).values();
  EXPECT_NE(tape_vjp(scaled_op, y, recon, g), tape_vjp(ste_op, y, recon, g));
}

TEST(Apply, LosslessFallsBackToIdentity) {
  CounterRng rng(4);
  const auto y = random_tensor(Shape{2, 3, 4, 4}, rng);
  SurrogateDiagnostics d;
  Tape<double> tape;
  const auto leaf = tape.leaf(y);
  const auto out = apply(tape, leaf, y, SurrogateConfig{}, d);
  EXPECT_EQ(d.groups, 2u);
  EXPECT_EQ(d.fallbacks, 2u);
  const auto g = tape.backward(sum(tape, out)).of(leaf);
  for (double v : g) EXPECT_EQ(v, 1.0);
}

TEST(Apply, OnlyTheLosslessSampleFallsBack) {
  CounterRng rng(6);
  const auto y = random_tensor(Shape{3, 3, 4, 4}, rng, 0, 1);
  auto r = round_to(y, 0.25).values();
  const std::size_t per = 3 * 16;
  std::copy(y.data().begin() + per, y.data().begin() + 2 * per, r.begin() + per);  // sample 1 lossless
  const Tensor<double> recon(y.shape(), r);
  SurrogateDiagnostics d;
  const auto gvec = random_tensor(y.shape(), rng).values();
  Tape<double> tape;
  const auto leaf = tape.leaf(y);
  const auto out = apply(tape, leaf, recon, SurrogateConfig{}, d);
  const auto grad = tape.backward(sum(tape, mul(tape, out, Tensor<double>(y.shape(), gvec)))).of(leaf);
  EXPECT_EQ(d.fallbacks, 1u);
  for (std::size_t i = per; i < 2 * per; ++i) EXPECT_EQ(grad[i], gvec[i]);
  bool changed = false;
  for (std::size_t i = 0; i < per; ++i) changed |= grad[i] != gvec[i];
  EXPECT_TRUE(changed);
}

TEST(Apply, CounterAccumulatesAcrossCalls) {
  SurrogateDiagnostics d;
  Tape<double> tape;
  const auto y = Tensor<double>::filled(Shape{2, 8}, 0.5);
  for (int i = 0; i < 3; ++i) apply(tape, y, y, SurrogateConfig{}, d);
  EXPECT_EQ(d.fallbacks, 6u);
  EXPECT_EQ(d.groups, 6u);
}

TEST(Apply, PerChannelScopeMatchesChannelWiseJacobian) {
  CounterRng rng(12);
  const auto y = random_tensor(Shape{1, 2, 2, 3}, rng, 0, 1);
  const auto recon = round_to(y, 0.25);
  const auto g = random_tensor(y.shape(), rng).values();
  const SurrogateConfig cfg{SurrogateMode::kScaled, SigmaScope::kPerChannel};
  const auto got = tape_vjp([&](Tape<double>& t, const Tensor<double>& a,
                                const Tensor<double>& b) { return scaled_apply(t, a, b, cfg); },
                            y, recon, g);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> eps(6), gc(g.begin() + c * 6, g.begin() + (c + 1) * 6);
    for (std::size_t i = 0; i < 6; ++i) eps[i] = recon[c * 6 + i] - y[c * 6 + i];
    const auto want = vjp(explicit_jacobian(eps), gc);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(got[c * 6 + i], want[i], 1e-10);
  }
}

TEST(Apply, RejectsNonPositiveFloor) {
  SurrogateDiagnostics d;
  Tape<double> tape;
  const auto y = Tensor<double>::zeros(Shape{4});
  EXPECT_THROW(apply(tape, y, y, {SurrogateMode::kScaled, SigmaScope::kPerSample, 0.0}, d), DomainError);
}

TEST(Scope, ParseAndGroups) {
  EXPECT_EQ(parse_sigma_scope("per-channel"), SigmaScope::kPerChannel);
  EXPECT_THROW(parse_sigma_scope("per-pixel"), DomainError);
  EXPECT_EQ(sigma_groups(Shape{4, 3, 8, 8}, SigmaScope::kPerSample), 4u);
  EXPECT_EQ(sigma_groups(Shape{4, 3, 8, 8}, SigmaScope::kPerChannel), 12u);
}
