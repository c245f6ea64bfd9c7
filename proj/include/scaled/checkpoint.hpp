#pragma once

// Checkpoint file, little-endian:
//
//   "SCLD"  u32 version  u32 tensor_count
//   per tensor: u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 payload
//   u32 blob_len, JSON blob (config, rate proxy, histories, provenance)
//
// Nothing may follow the blob.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "scaled/error.hpp"
#include "scaled/json_util.hpp"
#include "scaled/media_io.hpp"
#include "scaled/train.hpp"

namespace scaled {

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) throw CorruptCheckpoint(std::string("checkpoint truncated while reading ") + what);
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline jsonu::json proxy_to_json(const RateProxyParams& p) {
  return {{"tau", p.tau}, {"a", p.a}, {"b", p.b}, {"block", p.block}, {"calibrated", p.calibrated}};
}

inline RateProxyParams proxy_from_json(const jsonu::json& j) {
  RateProxyParams p;
  jsonu::check_keys(j, {"tau", "a", "b", "block", "calibrated"}, "rate_proxy");
  jsonu::read(j, "tau", p.tau, "rate_proxy");
  jsonu::read(j, "a", p.a, "rate_proxy");
  jsonu::read(j, "b", p.b, "rate_proxy");
  jsonu::read(j, "block", p.block, "rate_proxy");
  jsonu::read(j, "calibrated", p.calibrated, "rate_proxy");
  return p;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes("SCLD");
  w.u32(Checkpoint::kFormatVersion);
  w.u32(static_cast<std::uint32_t>(ck.model.tensors.size()));
  for (std::size_t k = 0; k < ck.model.tensors.size(); ++k) {
    const auto& t = ck.model.tensors[k];
    w.u32(static_cast<std::uint32_t>(ck.model.names[k].size()));
    w.bytes(ck.model.names[k]);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  jsonu::json hist = jsonu::json::array(), held = jsonu::json::array();
  for (const auto& r : ck.history) hist.push_back({r.step, r.loss, r.distortion, r.rate_term, r.y_l1, r.fallbacks});
  for (const auto& r : ck.heldout) held.push_back({r.step, r.post_codec_mse});
  const jsonu::json blob{{"config", to_json(ck.config)},
                         {"rate_proxy", ck.proxy ? detail::proxy_to_json(*ck.proxy) : jsonu::json(nullptr)},
                         {"history", hist},
                         {"heldout", held},
                         {"seed", ck.config.seed},
                         {"encoder_version", ck.encoder_version}};
  const std::string text = blob.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  return w.str();
}

inline Checkpoint parse_checkpoint(std::string_view data) {
  detail::ByteReader r(data);
  if (r.bytes(4, "magic") != "SCLD") throw CorruptCheckpoint("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version > Checkpoint::kFormatVersion) {
    throw VersionMismatch("checkpoint format version " + std::to_string(version) + " is newer than supported version " +
                          std::to_string(Checkpoint::kFormatVersion));
  }
  if (version == 0) throw CorruptCheckpoint("checkpoint format version 0 is invalid");

  Checkpoint ck;
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = r.u32("tensor name length");
    std::string name(r.bytes(name_len, "tensor name"));
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) throw CorruptCheckpoint("implausible rank " + std::to_string(rank) + " for tensor '" + name + "'");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(r.u32("tensor dims"));
      n *= shape.back();
    }
    if (n > data.size()) throw CorruptCheckpoint("tensor '" + name + "' is larger than the file");
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32("tensor payload");
    ck.model.names.push_back(std::move(name));
    ck.model.tensors.emplace_back(std::move(shape), std::move(values));
  }
  const std::uint32_t blob_len = r.u32("config blob length");
  const auto text = r.bytes(blob_len, "config blob");
  if (!r.at_end()) throw CorruptCheckpoint("trailing bytes after the config blob");

  try {
    const auto blob = jsonu::json::parse(text);
    jsonu::check_keys(blob, {"config", "rate_proxy", "history", "heldout", "seed", "encoder_version"}, "");
    ck.config = train_config_from_json(blob.at("config"));
    if (!blob.at("rate_proxy").is_null()) ck.proxy = detail::proxy_from_json(blob.at("rate_proxy"));
    for (const auto& h : blob.at("history")) {
      StepRecord s;
      s.step = h.at(0).get<std::uint64_t>();
      s.loss = h.at(1).get<double>();
      s.distortion = h.at(2).get<double>();
      s.rate_term = h.at(3).get<double>();
      s.y_l1 = h.at(4).get<double>();
      s.fallbacks = h.at(5).get<std::uint64_t>();
      ck.history.push_back(s);
    }
    for (const auto& h : blob.at("heldout")) ck.heldout.push_back({h.at(0).get<std::uint64_t>(), h.at(1).get<double>()});
    ck.encoder_version = blob.at("encoder_version").get<std::string>();
  } catch (const jsonu::json::exception& e) {
    throw CorruptCheckpoint(std::string("malformed checkpoint config blob: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptCheckpoint(std::string("malformed checkpoint config blob: ") + e.what());
  }
  ck.model.config = ck.config.model;
  ck.version = version;

  const auto expected = init_params(0, ck.model.config);
  if (expected.names != ck.model.names) throw CorruptCheckpoint("checkpoint tensors do not match the model layout");
  for (std::size_t k = 0; k < expected.tensors.size(); ++k) {
    if (expected.tensors[k].shape() != ck.model.tensors[k].shape()) {
      throw CorruptCheckpoint("tensor '" + ck.model.names[k] + "' has shape " + shape_str(ck.model.tensors[k].shape()) +
                              ", expected " + shape_str(expected.tensors[k].shape()));
    }
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_bytes_atomic(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such checkpoint '" + path.string() + "'");
  const auto bytes = detail::read_all(path);
  return parse_checkpoint(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace scaled
