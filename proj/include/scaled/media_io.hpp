#pragma once

// Raw planar YUV and Y4M I/O, chroma layout conversion and training patches.
//
// Byte layout (both containers): 8-bit samples, per frame all of Y, then U,
// then V, row-major. Y4M frames are prefixed by a "FRAME" line.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <unistd.h>

#include "scaled/error.hpp"
#include "scaled/frame.hpp"
#include "scaled/resample.hpp"
#include "scaled/rng.hpp"

namespace scaled {

enum class Container { kRaw, kY4m };

struct SequenceSource {
  std::filesystem::path path;
  std::size_t width = 0;   // required for raw; parsed for Y4M
  std::size_t height = 0;  // required for raw; parsed for Y4M
  ChromaLayout layout = ChromaLayout::k420;
  std::size_t frame_count = 0;  // filled by probe()
  std::size_t fps_num = 30;
  std::size_t fps_den = 1;
  Container container = Container::kRaw;
};

struct FrameRange {
  std::size_t first = 0;
  std::size_t count = SIZE_MAX;  // clipped to what the file holds
};

inline std::size_t frame_bytes(std::size_t width, std::size_t height, ChromaLayout layout) {
  const std::size_t luma = width * height;
  return layout == ChromaLayout::k420 ? luma + 2 * (width / 2) * (height / 2) : 3 * luma;
}

inline std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

/// Rounds every sample to the 8-bit grid (what a codec round trip through
/// 8-bit frames would produce).
inline FramePlanar quantize_8bit(FramePlanar f) {
  for (std::size_t p = 0; p < 3; ++p)
    for (auto& s : f.plane(p).samples) s = from_byte(to_byte(s));
  return f;
}

namespace detail {

struct Y4mHeader {
  std::size_t width = 0, height = 0, fps_num = 30, fps_den = 1;
  ChromaLayout layout = ChromaLayout::k420;
  std::size_t header_bytes = 0;
};

inline Y4mHeader parse_y4m_header(const std::string& line) {
  std::istringstream is(line);
  std::string magic;
  is >> magic;
  if (magic != "YUV4MPEG2") throw IoError("malformed Y4M header: missing YUV4MPEG2 signature");
  Y4mHeader h;
  std::string tok;
  while (is >> tok) {
    const char key = tok[0];
    const std::string val = tok.substr(1);
    try {
      switch (key) {
        case 'W': h.width = std::stoul(val); break;
        case 'H': h.height = std::stoul(val); break;
        case 'F': {
          const auto colon = val.find(':');
          if (colon == std::string::npos) throw IoError("malformed Y4M frame rate '" + tok + "'");
          h.fps_num = std::stoul(val.substr(0, colon));
          h.fps_den = std::stoul(val.substr(colon + 1));
          break;
        }
        case 'C':
          if (val.rfind("420", 0) == 0) {
            h.layout = ChromaLayout::k420;
          } else if (val == "444") {
            h.layout = ChromaLayout::k444;
          } else {
            throw IoError("unsupported Y4M chroma layout '" + val + "'");
          }
          break;
        default: break;  // I (interlace), A (aspect), X (comments) are ignored
      }
    } catch (const std::logic_error&) {
      throw IoError("malformed Y4M header field '" + tok + "'");
    }
  }
  if (h.width == 0 || h.height == 0) throw IoError("malformed Y4M header: missing W or H");
  if (h.layout == ChromaLayout::k420 && (h.width % 2 || h.height % 2)) {
    throw IoError("4:2:0 Y4M with odd dimensions is not supported");
  }
  return h;
}

inline FramePlanar decode_frame_bytes(const std::uint8_t* bytes, std::size_t width, std::size_t height,
                                      ChromaLayout layout) {
  FramePlanar f(width, height, layout);
  for (std::size_t p = 0; p < 3; ++p) {
    auto& s = f.plane(p).samples;
    for (auto& v : s) v = from_byte(*bytes++);
  }
  return f;
}

inline void encode_frame_bytes(const FramePlanar& f, std::vector<std::uint8_t>& out) {
  for (std::size_t p = 0; p < 3; ++p)
    for (float v : f.plane(p).samples) out.push_back(to_byte(v));
}

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

/// Fills in dims (Y4M), layout (Y4M), frame count and container from the file.
inline SequenceSource probe(SequenceSource src) {
  if (!std::filesystem::exists(src.path)) throw IoError("no such file '" + src.path.string() + "'");
  const auto size = std::filesystem::file_size(src.path);
  std::ifstream in(src.path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + src.path.string() + "'");
  char sig[9] = {};
  in.read(sig, 9);
  if (in.gcount() == 9 && std::string(sig, 9) == "YUV4MPEG2") {
    in.seekg(0);
    std::string line;
    std::getline(in, line);
    const auto h = detail::parse_y4m_header(line);
    src.container = Container::kY4m;
    src.width = h.width;
    src.height = h.height;
    src.layout = h.layout;
    src.fps_num = h.fps_num;
    src.fps_den = h.fps_den;
    // Frame headers are "FRAME\n" unless parameters are present; count by scanning.
    const std::size_t fb = frame_bytes(h.width, h.height, h.layout);
    std::size_t count = 0;
    std::string frame_line;
    while (std::getline(in, frame_line)) {
      if (frame_line.rfind("FRAME", 0) != 0) throw IoError("malformed Y4M: expected FRAME marker");
      in.seekg(static_cast<std::streamoff>(fb), std::ios::cur);
      if (!in || static_cast<std::uintmax_t>(in.tellg()) > size) throw IoError("truncated Y4M frame in '" + src.path.string() + "'");
      ++count;
      if (static_cast<std::uintmax_t>(in.tellg()) == size) break;
    }
    src.frame_count = count;
    return src;
  }
  if (src.width == 0 || src.height == 0) throw IoError("raw YUV source '" + src.path.string() + "' needs width and height");
  if (src.layout == ChromaLayout::k420 && (src.width % 2 || src.height % 2)) {
    throw IoError("4:2:0 raw YUV needs even dimensions");
  }
  const std::size_t fb = frame_bytes(src.width, src.height, src.layout);
  if (size % fb != 0) {
    throw IoError("truncated raw YUV '" + src.path.string() + "': " + std::to_string(size) +
                  " bytes is not a multiple of the frame size " + std::to_string(fb));
  }
  src.container = Container::kRaw;
  src.frame_count = size / fb;
  return src;
}

inline std::vector<FramePlanar> read_frames(const SequenceSource& source, FrameRange range = {}) {
  const SequenceSource src = probe(source);
  const auto bytes = detail::read_all(src.path);
  const std::size_t fb = frame_bytes(src.width, src.height, src.layout);
  std::vector<FramePlanar> frames;
  const std::size_t last = range.count == SIZE_MAX ? src.frame_count : std::min(src.frame_count, range.first + range.count);
  std::size_t pos = 0;
  if (src.container == Container::kY4m) pos = std::find(bytes.begin(), bytes.end(), '\n') - bytes.begin() + 1;
  for (std::size_t i = 0; i < last; ++i) {
    if (src.container == Container::kY4m) {
      const auto nl = std::find(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), '\n');
      if (nl == bytes.end()) throw IoError("truncated Y4M frame header");
      pos = static_cast<std::size_t>(nl - bytes.begin()) + 1;
    }
    if (pos + fb > bytes.size()) throw IoError("truncated frame " + std::to_string(i));
    if (i >= range.first) frames.push_back(detail::decode_frame_bytes(bytes.data() + pos, src.width, src.height, src.layout));
    pos += fb;
  }
  return frames;
}

/// Serializes frames; samples are clamped to [0, 1] and rounded half away
/// from zero to 8 bits.
inline std::vector<std::uint8_t> encode_frames(const std::vector<FramePlanar>& frames, Container container,
                                               std::size_t fps_num = 30, std::size_t fps_den = 1) {
  std::vector<std::uint8_t> out;
  if (frames.empty()) return out;
  const auto& first = frames.front();
  for (const auto& f : frames) {
    if (f.width() != first.width() || f.height() != first.height() || f.layout != first.layout) {
      throw ShapeError("write_frames: frames differ in size or layout");
    }
  }
  if (container == Container::kY4m) {
    const std::string header = "YUV4MPEG2 W" + std::to_string(first.width()) + " H" + std::to_string(first.height()) +
                               " F" + std::to_string(fps_num) + ":" + std::to_string(fps_den) + " Ip A1:1 C" +
                               (first.layout == ChromaLayout::k420 ? "420jpeg" : "444") + "\n";
    out.insert(out.end(), header.begin(), header.end());
  }
  for (const auto& f : frames) {
    if (container == Container::kY4m) {
      constexpr std::string_view marker = "FRAME\n";
      out.insert(out.end(), marker.begin(), marker.end());
    }
    detail::encode_frame_bytes(f, out);
  }
  return out;
}

inline void write_bytes(const std::filesystem::path& dst, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(dst, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + dst.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + dst.string() + "'");
}

/// Writes to a sibling temp file, then renames over `dst`.
inline void write_bytes_atomic(const std::filesystem::path& dst, std::string_view bytes) {
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = dst;
  tmp += ".tmp" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, dst, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + dst.string() + "'");
  }
}

/// Writes frames to `dst`. The container follows the extension (.y4m or raw).
inline void write_frames(const std::vector<FramePlanar>& frames, const std::filesystem::path& dst,
                         std::size_t fps_num = 30, std::size_t fps_den = 1) {
  const Container c = dst.extension() == ".y4m" ? Container::kY4m : Container::kRaw;
  write_bytes(dst, encode_frames(frames, c, fps_num, fps_den));
}

// ---------------------------------------------------------------------------
// Chroma handling. Both directions go through the resample module's tables.

/// 4:4:4 -> 4:2:0 with bilinear half-scale chroma.
inline FramePlanar convert_to_420(const FramePlanar& f) {
  if (f.layout == ChromaLayout::k420) return f;
  if (f.width() % 2 || f.height() % 2) throw ShapeError("4:2:0 conversion needs even dimensions");
  FramePlanar out;
  out.layout = ChromaLayout::k420;
  out.y = f.y;
  const auto rows = bilinear_axis(f.height(), f.height() / 2);
  const auto cols = bilinear_axis(f.width(), f.width() / 2);
  out.u = resample(f.u, rows, cols);
  out.v = resample(f.v, rows, cols);
  return out;
}

/// 4:2:0 -> 4:4:4 with bicubic x2 chroma.
inline FramePlanar convert_to_444(const FramePlanar& f) {
  if (f.layout == ChromaLayout::k444) return f;
  FramePlanar out;
  out.layout = ChromaLayout::k444;
  out.y = f.y;
  const auto rows = bicubic_axis(f.u.height, f.height());
  const auto cols = bicubic_axis(f.u.width, f.width());
  out.u = resample(f.u, rows, cols);
  out.v = resample(f.v, rows, cols);
  return out;
}

/// Chroma goes down by 1/2 bilinearly and back up x2 bicubically; luma is untouched.
inline FramePlanar simulate_chroma_degradation(const FramePlanar& f) {
  if (f.layout != ChromaLayout::k444) throw ShapeError("chroma degradation expects a 4:4:4 frame");
  if (f.width() % 2 || f.height() % 2) throw ShapeError("chroma degradation needs even dimensions");
  return convert_to_444(convert_to_420(f));
}

// ---------------------------------------------------------------------------
// Patches

/// Cuts every frame into patch x patch tiles on a `stride` grid (4:4:4 out),
/// then shuffles the full list with `seed`.
inline std::vector<FramePlanar> extract_patches(const std::vector<FramePlanar>& frames, std::size_t patch,
                                                std::size_t stride, std::uint64_t seed) {
  if (patch == 0 || stride == 0) throw DomainError("patch size and stride must be positive");
  std::vector<FramePlanar> patches;
  for (const auto& src : frames) {
    if (patch > src.width() || patch > src.height()) {
      throw ShapeError("patch " + std::to_string(patch) + " larger than frame " + std::to_string(src.width()) + "x" +
                       std::to_string(src.height()));
    }
    const FramePlanar f = convert_to_444(src);
    for (std::size_t y0 = 0; y0 + patch <= f.height(); y0 += stride)
      for (std::size_t x0 = 0; x0 + patch <= f.width(); x0 += stride) {
        FramePlanar p(patch, patch, ChromaLayout::k444);
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t y = 0; y < patch; ++y)
            for (std::size_t x = 0; x < patch; ++x) p.plane(c).at(x, y) = f.plane(c).at(x0 + x, y0 + y);
        patches.push_back(std::move(p));
      }
  }
  CounterRng rng(seed, 0x70617463ULL);
  rng.shuffle(std::span<FramePlanar>(patches));
  return patches;
}

}  // namespace scaled
