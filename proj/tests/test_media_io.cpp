#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "scaled/media_io.hpp"
#include "scaled/synthetic.hpp"

using namespace scaled;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("scaled_media_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(ReadFrames, ByteLayoutOfTiny420Frame) {
  const auto path = temp_path("tiny.yuv");
  write_bytes(path, {10, 20, 30, 40, 128, 255});
  const auto frames = read_frames({.path = path, .width = 2, .height = 2, .layout = ChromaLayout::k420});
  ASSERT_EQ(frames.size(), 1u);
  const auto& f = frames[0];
  EXPECT_EQ(f.y.samples, (std::vector<float>{10 / 255.f, 20 / 255.f, 30 / 255.f, 40 / 255.f}));
  EXPECT_EQ(f.u.samples, std::vector<float>{128 / 255.f});
  EXPECT_EQ(f.v.samples, std::vector<float>{1.0f});
}

TEST(ReadFrames, RawAndY4mRoundTripBitExactly) {
  for (auto layout : {ChromaLayout::k420, ChromaLayout::k444}) {
    for (const char* ext : {".yuv", ".y4m"}) {
      auto frames = synthetic_sequence(24, 16, 3, 5);
      if (layout == ChromaLayout::k420) {
        for (auto& f : frames) f = quantize_8bit(convert_to_420(f));
      }
      const auto path = temp_path(std::string("rt") + ext);
      write_frames(frames, path);
      const auto back = read_frames({.path = path, .width = 24, .height = 16, .layout = layout});
      EXPECT_EQ(back, frames);
      const auto mid = read_frames({.path = path, .width = 24, .height = 16, .layout = layout}, {1, 1});
      ASSERT_EQ(mid.size(), 1u);
      EXPECT_EQ(mid[0], frames[1]);
    }
  }
}

TEST(ReadFrames, ByteRoundTripIsIdentity) {
  std::vector<std::uint8_t> bytes(3 * 4 * 4);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(i * 5 + 3);
  const auto path = temp_path("bytes.yuv");
  write_bytes(path, bytes);
  const auto frames = read_frames({.path = path, .width = 4, .height = 4, .layout = ChromaLayout::k444});
  EXPECT_EQ(encode_frames(frames, Container::kRaw), bytes);
}

TEST(ReadFrames, Errors) {
  EXPECT_THROW(read_frames({.path = temp_path("missing.yuv"), .width = 2, .height = 2}), IoError);
  const auto path = temp_path("trunc.yuv");
  write_bytes(path, {1, 2, 3, 4, 5});
  EXPECT_THROW(read_frames({.path = path, .width = 2, .height = 2}), IoError);
  try {
    read_frames({.path = temp_path("missing.yuv"), .width = 2, .height = 2});
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.yuv"), std::string::npos);
  }
}

TEST(Y4m, HeaderParse) {
  const auto h = detail::parse_y4m_header("YUV4MPEG2 W64 H32 F30:1 C420");
  EXPECT_EQ(h.width, 64u);
  EXPECT_EQ(h.height, 32u);
  EXPECT_EQ(h.layout, ChromaLayout::k420);
  EXPECT_EQ(detail::parse_y4m_header("YUV4MPEG2 W8 H8 F25:1 C444").layout, ChromaLayout::k444);
  EXPECT_THROW(detail::parse_y4m_header("YUV4MPEG2 W8 H8 C422"), IoError);
  EXPECT_THROW(detail::parse_y4m_header("YUV4MPEG W8 H8"), IoError);
}

TEST(Y4m, ProbeReportsDims) {
  const auto path = temp_path("probe.y4m");
  write_frames(synthetic_sequence(64, 32, 2, 1), path, 25, 1);
  const auto src = probe({.path = path});
  EXPECT_EQ(src.width, 64u);
  EXPECT_EQ(src.height, 32u);
  EXPECT_EQ(src.layout, ChromaLayout::k444);
  EXPECT_EQ(src.frame_count, 2u);
  EXPECT_EQ(src.fps_num, 25u);
}

TEST(WriteFrames, ByteConversion) {
  EXPECT_EQ(to_byte(0.5f), 128);
  EXPECT_EQ(to_byte(1.0f), 255);
  EXPECT_EQ(to_byte(1.2f), 255);
  EXPECT_EQ(to_byte(-0.3f), 0);
}

TEST(ChromaDegradation, ConstantChromaUnchanged) {
  const FramePlanar f(16, 8, ChromaLayout::k444, 0.3f, 0.7f);
  const auto d = simulate_chroma_degradation(f);
  for (float v : d.u.samples) EXPECT_NEAR(v, 0.7f, 1e-6f);
  EXPECT_EQ(d.y, f.y);
}

TEST(ChromaDegradation, LumaUntouchedOnNaturalContent) {
  const auto f = synthetic_frame(32, 32, 3);
  EXPECT_EQ(simulate_chroma_degradation(f).y, f.y);
}

TEST(ChromaDegradation, CheckerboardLosesAmplitude) {
  FramePlanar f(4, 4, ChromaLayout::k444);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) f.u.at(x, y) = (x + y) % 2 ? 1.0f : 0.0f;
  const auto d = simulate_chroma_degradation(f);
  for (float v : d.u.samples) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(ChromaDegradation, MatchesCodecChromaPath) {
  const auto f = synthetic_frame(16, 16, 9);
  EXPECT_EQ(simulate_chroma_degradation(f), convert_to_444(convert_to_420(f)));
}

TEST(ExtractPatches, PatchLargerThanFrameThrows) {
  EXPECT_THROW(extract_patches(synthetic_sequence(64, 48, 1, 3), 64, 64, 1), ShapeError);
}

TEST(ExtractPatches, Counts) {
  const std::vector<FramePlanar> one{synthetic_frame(256, 256, 1)};
  EXPECT_EQ(extract_patches(one, 64, 64, 1).size(), 16u);
  const auto seq = synthetic_sequence(32, 16, 3, 2);
  std::vector<FramePlanar> full(seq.begin(), seq.end());
  const auto whole = extract_patches(full, 16, 16, 3);
  EXPECT_EQ(whole.size(), 6u);
}

TEST(ExtractPatches, PatchEqualsFrame) {
  const auto seq = synthetic_sequence(32, 32, 3, 2);
  const auto p = extract_patches(seq, 32, 32, 9);
  ASSERT_EQ(p.size(), 3u);
  for (const auto& f : seq) EXPECT_NE(std::find(p.begin(), p.end(), f), p.end());
}

TEST(ExtractPatches, SeedFixesOrder) {
  const auto seq = synthetic_sequence(64, 64, 2, 4);
  EXPECT_EQ(extract_patches(seq, 16, 16, 42), extract_patches(seq, 16, 16, 42));
  EXPECT_NE(extract_patches(seq, 16, 16, 42), extract_patches(seq, 16, 16, 43));
}
