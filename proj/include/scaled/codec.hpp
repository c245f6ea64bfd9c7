#pragma once

// Black-box codec round trips.
//
//  * external-h264: frames are converted to 4:2:0 8-bit, piped into an H.264
//    encoder (x264 CLI or ffmpeg/libx264), the Annex B elementary stream is
//    measured (bits = 8 x stream bytes) and decoded back to raw 4:2:0.
//  * toy-dct: in-process 8x8 DCT + uniform quantizer with an exact
//    code-length bit count. Hermetic and deterministic.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "scaled/dct.hpp"
#include "scaled/error.hpp"
#include "scaled/frame.hpp"
#include "scaled/hash.hpp"
#include "scaled/media_io.hpp"
#include "scaled/rng.hpp"
#include "scaled/subprocess.hpp"
#include "scaled/tensor.hpp"

namespace scaled {

/// kLossless returns its input unchanged (8 bits per sample); a reference
/// point for tests and ablations.
enum class CodecBackend { kExternalH264, kToyDct, kLossless };

inline std::string to_string(CodecBackend b) {
  switch (b) {
    case CodecBackend::kExternalH264: return "external-h264";
    case CodecBackend::kToyDct: return "toy-dct";
    case CodecBackend::kLossless: return "lossless";
  }
  return "?";
}

inline CodecBackend parse_codec_backend(const std::string& s) {
  for (auto b : {CodecBackend::kExternalH264, CodecBackend::kToyDct, CodecBackend::kLossless})
    if (to_string(b) == s) return b;
  throw DomainError("unknown codec backend '" + s + "' (expected toy-dct, external-h264 or lossless)");
}

/// Command-line dialect of the encoder executable.
enum class EncoderProfile { kAuto, kX264, kFfmpeg };

struct ExternalCodecSettings {
  std::string encoder = "x264";
  std::string decoder = "ffmpeg";
  EncoderProfile profile = EncoderProfile::kAuto;  // auto: "ffmpeg" in the encoder name selects kFfmpeg
  std::vector<std::string> extra_args;
  std::filesystem::path temp_dir;  // empty: system temp directory
  std::size_t fps_num = 30;
  std::size_t fps_den = 1;
};

/// H.264-style step size for a QP, in [0, 1] signal units.
inline double qp_to_qstep(int qp) { return 0.625 * std::pow(2.0, qp / 6.0) / 255.0; }

struct CodecConfig {
  CodecBackend backend = CodecBackend::kToyDct;
  int qp = 27;
  std::optional<double> qstep;  // toy backend; derived from qp when absent
  std::string preset = "medium";
  ExternalCodecSettings external;

  double toy_qstep() const { return qstep ? *qstep : qp_to_qstep(qp); }

  void validate() const {
    if (backend == CodecBackend::kExternalH264 && (qp < 0 || qp > 51)) {
      throw DomainError("QP " + std::to_string(qp) + " outside [0, 51]");
    }
    if (backend == CodecBackend::kToyDct && !(toy_qstep() > 0.0)) throw DomainError("toy codec qstep must be > 0");
  }
};

inline std::vector<int> default_evaluation_qps() {
  std::vector<int> qps;
  for (int qp = 17; qp <= 47; qp += 3) qps.push_back(qp);
  return qps;
}

struct CodecResult {
  std::vector<FramePlanar> recon;
  std::uint64_t bits = 0;
  std::string encoder_version;  // "toy-dct/1" for the built-in codec
  std::string command;          // encoder invocation, for provenance
  std::string bitstream_sha256;  // external backend only
};

// ---------------------------------------------------------------------------
// Toy codec

namespace toy {

/// Length of the unsigned exp-Golomb code of k.
inline std::uint64_t ue_bits(std::uint64_t k) {
  std::uint64_t len = 0;
  for (std::uint64_t v = k + 1; v > 1; v >>= 1) ++len;
  return 2 * len + 1;
}

/// Length of the signed exp-Golomb code of v (v > 0 -> 2v - 1, v <= 0 -> -2v).
inline std::uint64_t se_bits(std::int64_t v) {
  return ue_bits(v > 0 ? static_cast<std::uint64_t>(2 * v - 1) : static_cast<std::uint64_t>(-2 * v));
}

/// Cost of one block of quantized levels (row-major 8x8): ue(nonzero count),
/// then for each nonzero level in zigzag order ue(zero run) + se(level).
inline std::uint64_t block_bits(const std::int64_t* levels) {
  const auto& zz = dct::zigzag();
  std::uint64_t bits = 0, nonzero = 0, run = 0;
  for (std::size_t k = 0; k < zz.size(); ++k) {
    const std::int64_t level = levels[zz[k]];
    if (level == 0) {
      ++run;
      continue;
    }
    bits += ue_bits(run) + se_bits(level);
    run = 0;
    ++nonzero;
  }
  return bits + ue_bits(nonzero);
}

struct PlaneResult {
  Plane recon;
  std::uint64_t bits = 0;
};

/// Round trip of one plane. Dimensions are padded to multiples of 8 by edge
/// replication; the reconstruction is cropped back and clamped to [0, 1].
inline PlaneResult code_plane(const Plane& p, double qstep) {
  constexpr std::size_t B = dct::kBlock;
  const std::size_t pw = (p.width + B - 1) / B * B, ph = (p.height + B - 1) / B * B;
  std::vector<double> padded(pw * ph);
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t x = 0; x < pw; ++x) padded[y * pw + x] = p.at(std::min(x, p.width - 1), std::min(y, p.height - 1));

  PlaneResult r;
  r.recon = Plane(p.width, p.height);
  double coeff[B * B], rec[B * B];
  std::int64_t levels[B * B];
  for (std::size_t by = 0; by < ph; by += B)
    for (std::size_t bx = 0; bx < pw; bx += B) {
      dct::forward(padded.data() + by * pw + bx, pw, coeff, B);
      for (std::size_t k = 0; k < B * B; ++k) {
        levels[k] = static_cast<std::int64_t>(std::llround(coeff[k] / qstep));
        coeff[k] = static_cast<double>(levels[k]) * qstep;
      }
      r.bits += block_bits(levels);
      dct::inverse(coeff, B, rec, B);
      for (std::size_t y = 0; y < B && by + y < p.height; ++y)
        for (std::size_t x = 0; x < B && bx + x < p.width; ++x)
          r.recon.at(bx + x, by + y) = static_cast<float>(std::clamp(rec[y * B + x], 0.0, 1.0));
    }
  return r;
}

}  // namespace toy

inline CodecResult toy_encode_decode(const std::vector<FramePlanar>& frames, double qstep) {
  if (!(qstep > 0.0)) throw DomainError("toy codec qstep must be > 0");
  CodecResult result;
  result.encoder_version = "toy-dct/1";
  result.command = "toy-dct qstep=" + std::to_string(qstep);
  for (const auto& f : frames) {
    FramePlanar out;
    out.layout = f.layout;
    for (std::size_t p = 0; p < 3; ++p) {
      auto pr = toy::code_plane(f.plane(p), qstep);
      out.plane(p) = std::move(pr.recon);
      result.bits += pr.bits;
    }
    result.recon.push_back(std::move(out));
  }
  return result;
}

// ---------------------------------------------------------------------------
// External H.264

namespace detail {

inline EncoderProfile resolve_profile(const ExternalCodecSettings& s) {
  if (s.profile != EncoderProfile::kAuto) return s.profile;
  return std::filesystem::path(s.encoder).filename().string().find("ffmpeg") != std::string::npos
             ? EncoderProfile::kFfmpeg
             : EncoderProfile::kX264;
}

inline std::filesystem::path make_job_dir(const std::filesystem::path& base) {
  static std::atomic<std::uint64_t> counter{0};
  const auto root = base.empty() ? std::filesystem::temp_directory_path() : base;
  std::filesystem::create_directories(root);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto n = counter.fetch_add(1);
    auto dir = root / ("scaled-codec-" + std::to_string(::getpid()) + "-" + std::to_string(n));
    if (std::filesystem::create_directory(dir)) return dir;
  }
  throw CodecError("cannot create a temp directory under '" + root.string() + "'");
}

struct JobDir {
  std::filesystem::path path;
  ~JobDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline std::filesystem::path require_executable(const std::string& name, const char* role, const char* env) {
  if (auto p = find_executable(name)) return *p;
  throw CodecError(std::string(role) + " executable '" + name + "' not found; install it, set the codec." + role +
                   " config key, or export " + env);
}

inline std::string shell_join(const std::vector<std::string>& argv) {
  std::string s;
  for (const auto& a : argv) s += (s.empty() ? "" : " ") + a;
  return s;
}

}  // namespace detail

/// First line of the encoder's version banner; cached per executable.
inline std::string encoder_version(const ExternalCodecSettings& s) {
  static std::mutex mu;
  static std::map<std::string, std::string> cache;
  const auto exe = detail::require_executable(s.encoder, "encoder", "SCALED_ENCODER");
  const std::lock_guard lock(mu);
  if (auto it = cache.find(exe.string()); it != cache.end()) return it->second;
  const detail::JobDir dir{detail::make_job_dir(s.temp_dir)};
  const bool ffmpeg = detail::resolve_profile(s) == EncoderProfile::kFfmpeg;
  const auto res = run_process({exe.string(), ffmpeg ? "-version" : "--version"}, {}, dir.path / "version.log");
  std::string line = res.output.substr(0, res.output.find('\n'));
  if (line.empty()) line = exe.filename().string() + " (unknown version)";
  cache[exe.string()] = line;
  return line;
}

inline CodecResult external_encode_decode(const std::vector<FramePlanar>& frames, const CodecConfig& cfg) {
  cfg.validate();
  const auto& ext = cfg.external;
  const auto encoder = detail::require_executable(ext.encoder, "encoder", "SCALED_ENCODER");
  const auto decoder = detail::require_executable(ext.decoder, "decoder", "SCALED_DECODER");
  const std::size_t w = frames.front().width(), h = frames.front().height();
  if (w % 2 || h % 2) throw ShapeError("external codec needs even frame dimensions");

  std::vector<FramePlanar> yuv420;
  yuv420.reserve(frames.size());
  for (const auto& f : frames) {
    if (f.width() != w || f.height() != h) throw ShapeError("external codec: frames differ in size");
    yuv420.push_back(convert_to_420(f));
  }
  const auto raw = encode_frames(yuv420, Container::kRaw);

  const detail::JobDir dir{detail::make_job_dir(ext.temp_dir)};
  const auto stream = dir.path / "stream.264";
  const auto decoded = dir.path / "decoded.yuv";
  const std::string res = std::to_string(w) + "x" + std::to_string(h);
  const std::string fps = std::to_string(ext.fps_num) + "/" + std::to_string(ext.fps_den);
  const std::string qp = std::to_string(cfg.qp);

  std::vector<std::string> enc{encoder.string()};
  if (detail::resolve_profile(ext) == EncoderProfile::kFfmpeg) {
    enc.insert(enc.end(), {"-hide_banner", "-loglevel", "error", "-f", "rawvideo", "-pix_fmt", "yuv420p", "-s", res,
                           "-r", fps, "-i", "-", "-c:v", "libx264", "-preset", cfg.preset, "-qp", qp, "-threads", "1"});
    enc.insert(enc.end(), ext.extra_args.begin(), ext.extra_args.end());
    enc.insert(enc.end(), {"-f", "h264", "-y", stream.string()});
  } else {
    enc.insert(enc.end(), {"--preset", cfg.preset, "--qp", qp, "--input-res", res, "--fps", fps, "--demuxer", "raw",
                           "--input-csp", "i420", "--threads", "1", "--quiet"});
    enc.insert(enc.end(), ext.extra_args.begin(), ext.extra_args.end());
    enc.insert(enc.end(), {"--output", stream.string(), "-"});
  }
  const auto enc_res = run_process(enc, raw, dir.path / "encode.log");
  if (enc_res.exit_code != 0) {
    throw CodecError("encoder exited with code " + std::to_string(enc_res.exit_code) + ": " + enc_res.output);
  }
  if (!std::filesystem::exists(stream) || std::filesystem::file_size(stream) == 0) {
    throw CodecError("encoder produced no bitstream");
  }

  const std::vector<std::string> dec{decoder.string(), "-hide_banner", "-loglevel", "error", "-i", stream.string(),
                                     "-f",             "rawvideo",     "-pix_fmt",  "yuv420p", "-y", decoded.string()};
  const auto dec_res = run_process(dec, {}, dir.path / "decode.log");
  if (dec_res.exit_code != 0) {
    throw CodecError("decoder exited with code " + std::to_string(dec_res.exit_code) + ": " + dec_res.output);
  }

  SequenceSource src;
  src.path = decoded;
  src.width = w;
  src.height = h;
  src.layout = ChromaLayout::k420;
  std::vector<FramePlanar> recon420;
  try {
    recon420 = read_frames(src);
  } catch (const IoError& e) {
    throw CodecError(std::string("decoded stream does not match the input: ") + e.what());
  }
  if (recon420.size() != frames.size()) {
    throw CodecError("decoder returned " + std::to_string(recon420.size()) + " frames for " +
                     std::to_string(frames.size()) + " encoded");
  }

  CodecResult result;
  result.bits = 8 * static_cast<std::uint64_t>(std::filesystem::file_size(stream));
  result.encoder_version = encoder_version(ext);
  result.command = detail::shell_join(enc);
  result.bitstream_sha256 = sha256_file(stream);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    result.recon.push_back(frames[i].layout == ChromaLayout::k444 ? convert_to_444(recon420[i]) : std::move(recon420[i]));
  }
  return result;
}

/// Encode-decode round trip through the configured backend.
inline CodecResult encode_decode(const std::vector<FramePlanar>& frames, const CodecConfig& cfg) {
  if (frames.empty()) throw DomainError("encode_decode: no frames");
  cfg.validate();
  if (cfg.backend == CodecBackend::kToyDct) return toy_encode_decode(frames, cfg.toy_qstep());
  if (cfg.backend == CodecBackend::kLossless) {
    CodecResult r{frames, 0, "lossless/1", "lossless", {}};
    for (const auto& f : frames)
      for (std::size_t p = 0; p < 3; ++p) r.bits += 8 * f.plane(p).samples.size();
    return r;
  }
  return external_encode_decode(frames, cfg);
}

/// True when the external encoder and decoder can be found.
inline bool external_codec_available(const ExternalCodecSettings& s) {
  return find_executable(s.encoder).has_value() && find_executable(s.decoder).has_value();
}

/// True when encode_decode can run with `cfg` on this machine.
inline bool codec_available(const CodecConfig& cfg) {
  return cfg.backend != CodecBackend::kExternalH264 || external_codec_available(cfg.external);
}

/// Version string stamped into outputs produced with `cfg`.
inline std::string codec_version(const CodecConfig& cfg) {
  switch (cfg.backend) {
    case CodecBackend::kToyDct: return "toy-dct/1";
    case CodecBackend::kLossless: return "lossless/1";
    case CodecBackend::kExternalH264: return encoder_version(cfg.external);
  }
  return "";
}

/// epsilon = recon - y as a constant tensor (the codec lives outside the tape).
template <class T>
Tensor<T> compression_error(const Tensor<T>& y, const CodecResult& result) {
  const auto recon = frames_to_tensor<T>(result.recon);
  if (recon.shape() != y.shape()) {
    throw ShapeError("compression_error: codec output " + shape_str(recon.shape()) + " vs input " + shape_str(y.shape()));
  }
  std::vector<T> eps(y.size());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = recon[i] - y[i];
  return Tensor<T>(y.shape(), std::move(eps));
}

}  // namespace scaled
