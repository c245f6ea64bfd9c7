#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "scaled/codec.hpp"
#include "scaled/dct.hpp"
#include "scaled/synthetic.hpp"

using namespace scaled;

namespace {

const std::string kFixtures = SCALED_FIXTURE_DIR;

double psnr_all(const FramePlanar& a, const FramePlanar& b) {
  double se = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < a.plane(p).samples.size(); ++i) {
      const double d = a.plane(p).samples[i] - b.plane(p).samples[i];
      se += d * d;
      ++n;
    }
  return se == 0 ? 99.0 : 10 * std::log10(n / se);
}

CodecConfig toy_cfg(double qstep) {
  CodecConfig c;
  c.qstep = qstep;
  return c;
}

CodecConfig fake_external(const std::string& encoder = kFixtures + "/fake_x264") {
  CodecConfig c;
  c.backend = CodecBackend::kExternalH264;
  c.external.encoder = encoder;
  c.external.decoder = kFixtures + "/fake_decoder";
  return c;
}

}  // namespace

TEST(Dct, OrthonormalBasisAndConstantBlock) {
  double in[64], out[64], back[64];
  for (double& v : in) v = 0.3;
  dct::forward(in, 8, out, 8);
  EXPECT_NEAR(out[0], 8 * 0.3, 1e-12);
  for (int k = 1; k < 64; ++k) EXPECT_NEAR(out[k], 0.0, 1e-12);
  CounterRng rng(2);
  double e_in = 0, e_out = 0;
  for (double& v : in) {
    v = rng.uniform();
    e_in += v * v;
  }
  dct::forward(in, 8, out, 8);
  for (double v : out) e_out += v * v;
  EXPECT_NEAR(e_in, e_out, 1e-10);
  dct::inverse(out, 8, back, 8);
  for (int k = 0; k < 64; ++k) EXPECT_NEAR(back[k], in[k], 1e-12);
}

TEST(Dct, ZigzagIsPermutationStartingAtDc) {
  const auto& zz = dct::zigzag();
  std::vector<bool> seen(64);
  for (auto k : zz) seen[k] = true;
  EXPECT_EQ(std::count(seen.begin(), seen.end(), true), 64);
  EXPECT_EQ(zz[0], 0u);
  EXPECT_EQ(zz[1], 1u);
  EXPECT_EQ(zz[2], 8u);
  EXPECT_EQ(zz[63], 63u);
}

TEST(ExpGolomb, CodeLengths) {
  EXPECT_EQ(toy::ue_bits(0), 1u);
  EXPECT_EQ(toy::ue_bits(1), 3u);
  EXPECT_EQ(toy::ue_bits(2), 3u);
  EXPECT_EQ(toy::ue_bits(3), 5u);
  EXPECT_EQ(toy::se_bits(1), 3u);
  EXPECT_EQ(toy::se_bits(-1), 3u);
  EXPECT_EQ(toy::se_bits(2), 5u);
}

TEST(ToyCodec, FineQstepIsNearLossless) {
  const auto f = synthetic_frame(64, 48, 1);
  const auto r = encode_decode({f}, toy_cfg(0.001));
  EXPECT_GT(psnr_all(f, r.recon[0]), 55.0);
}

TEST(ToyCodec, VeryFineQstepIsLosslessOn8BitData) {
  // Per-sample error is at most 4 * qstep / 2 after the inverse transform,
  // which stays under half a code value for qstep < 0.25 / 255.
  const auto f = synthetic_frame(40, 24, 3);
  const auto r = encode_decode({f}, toy_cfg(0.12 / 255));
  EXPECT_EQ(quantize_8bit(r.recon[0]), f);
}

TEST(ToyCodec, ConstantGrayKeepsOnlyDc) {
  const FramePlanar f(16, 16, ChromaLayout::k444, 0.5f, 0.5f);
  const double q = 4.0 / 255;
  const auto r = toy_encode_decode({f}, q);
  // Per block: DC level L = round(8 * 0.5 / q); cost ue(1) + ue(0) + se(L).
  const auto level = static_cast<std::int64_t>(std::llround(4.0 / q));
  const std::uint64_t per_block = toy::ue_bits(1) + toy::ue_bits(0) + toy::se_bits(level);
  EXPECT_EQ(r.bits, 3 * 4 * per_block);
  for (float v : r.recon[0].y.samples) EXPECT_NEAR(v, level * q / 8, 1e-6);
}

TEST(ToyCodec, HugeQstepZeroesEverything) {
  const auto f = synthetic_frame(16, 24, 5);
  const auto r = toy_encode_decode({f}, 1e6);
  EXPECT_EQ(r.bits, 3u * 2 * 3 * toy::ue_bits(0));
  for (std::size_t p = 0; p < 3; ++p)
    for (float v : r.recon[0].plane(p).samples) EXPECT_EQ(v, 0.0f);
}

TEST(ToyCodec, BitsAndQualityMonotoneInQstep) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto f = synthetic_frame(64, 64, seed);
    EXPECT_GE(toy_encode_decode({f}, 0.5 / 255).bits, toy_encode_decode({f}, 2.0 / 255).bits);
    double prev = 1e9;
    for (double q : {0.25, 1.0, 4.0, 16.0}) {
      const double p = psnr_all(f, toy_encode_decode({f}, q / 255).recon[0]);
      EXPECT_LT(p, prev) << "qstep " << q;
      prev = p;
    }
  }
}

TEST(ToyCodec, Deterministic) {
  const auto frames = synthetic_sequence(40, 32, 3, 11);
  const auto a = encode_decode(frames, toy_cfg(3.0 / 255));
  for (int i = 0; i < 3; ++i) {
    const auto b = encode_decode(frames, toy_cfg(3.0 / 255));
    EXPECT_EQ(a.recon, b.recon);
    EXPECT_EQ(a.bits, b.bits);
  }
}

TEST(ToyCodec, QpMapping) {
  EXPECT_NEAR(qp_to_qstep(0), 0.625 / 255, 1e-15);
  EXPECT_NEAR(qp_to_qstep(28) / qp_to_qstep(22), 2.0, 1e-12);
  CodecConfig c;
  c.qp = 28;
  EXPECT_DOUBLE_EQ(c.toy_qstep(), qp_to_qstep(28));
  c.qstep = -1;
  EXPECT_THROW(c.validate(), DomainError);
}

TEST(CompressionError, Definition) {
  const auto frames = synthetic_sequence(16, 16, 2, 7);
  const auto y = frames_to_tensor<double>(frames);
  const auto r = toy_encode_decode(frames, 5.0 / 255);
  const auto eps = compression_error(y, r);
  const auto recon = frames_to_tensor<double>(r.recon);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(eps[i] + y[i], recon[i]);

  CodecResult lossless;
  lossless.recon = frames;
  for (double v : compression_error(y, lossless).data()) EXPECT_EQ(v, 0.0);
}

TEST(ExternalCodec, FixtureProtocolRoundTrip) {
  auto frames = synthetic_sequence(32, 16, 3, 2);
  for (auto& f : frames) f = quantize_8bit(convert_to_420(f));
  const auto r = encode_decode(frames, fake_external());
  // The fake stream is the raw 4:2:0 payload plus a 4-byte tag.
  EXPECT_EQ(r.bits, 8u * (4 + 3 * frame_bytes(32, 16, ChromaLayout::k420)));
  EXPECT_EQ(r.recon, frames);
  EXPECT_EQ(r.encoder_version, "fake_x264 0.1");
  EXPECT_NE(r.command.find("--qp 27"), std::string::npos);
  EXPECT_NE(r.command.find("--preset medium"), std::string::npos);
}

TEST(ExternalCodec, Input444ComesBackAs444) {
  const auto frames = synthetic_sequence(32, 16, 1, 2);
  const auto r = encode_decode(frames, fake_external());
  EXPECT_EQ(r.recon[0].layout, ChromaLayout::k444);
  EXPECT_EQ(r.recon[0].y, frames[0].y);
}

TEST(ExternalCodec, MissingEncoderIsActionable) {
  auto cfg = fake_external();
  cfg.external.encoder = "definitely-not-an-encoder-xyz";
  try {
    encode_decode(synthetic_sequence(16, 16, 1, 1), cfg);
    FAIL() << "expected CodecError";
  } catch (const CodecError& e) {
    EXPECT_NE(std::string(e.what()).find("definitely-not-an-encoder-xyz"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("SCALED_ENCODER"), std::string::npos);
  }
}

TEST(ExternalCodec, EncoderFailureSurfacesLog) {
  try {
    encode_decode(synthetic_sequence(16, 16, 1, 1), fake_external(kFixtures + "/failing_encoder"));
    FAIL() << "expected CodecError";
  } catch (const CodecError& e) {
    EXPECT_NE(std::string(e.what()).find("simulated crash"), std::string::npos);
  }
}

TEST(ExternalCodec, ConcurrentCallsAreIsolated) {
  std::vector<std::vector<FramePlanar>> inputs;
  for (std::uint64_t s = 0; s < 6; ++s) {
    auto seq = synthetic_sequence(16, 16, 1, s + 100);
    for (auto& f : seq) f = quantize_8bit(convert_to_420(f));
    inputs.push_back(seq);
  }
  std::vector<CodecResult> results(inputs.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    threads.emplace_back([&, i] { results[i] = encode_decode(inputs[i], fake_external()); });
  for (auto& t : threads) t.join();
  for (std::size_t i = 0; i < inputs.size(); ++i) EXPECT_EQ(results[i].recon, inputs[i]);
}

TEST(ExternalCodec, RealEncoderIsDeterministic) {
  CodecConfig cfg;
  cfg.backend = CodecBackend::kExternalH264;
  cfg.external.encoder = "ffmpeg";
  if (!external_codec_available(cfg.external)) GTEST_SKIP() << "ffmpeg not installed";
  const auto frames = synthetic_sequence(64, 48, 3, 4);
  const auto a = encode_decode(frames, cfg);
  const auto b = encode_decode(frames, cfg);
  EXPECT_EQ(a.recon, b.recon);
  EXPECT_EQ(a.bits, b.bits);
  EXPECT_GT(psnr_all(frames[0], a.recon[0]), 30.0);
  cfg.qp = 40;
  EXPECT_LT(encode_decode(frames, cfg).bits, a.bits);
}
