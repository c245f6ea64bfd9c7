#pragma once

// Run configuration shared by every CLI command. One JSON file; unknown keys
// are rejected at every level.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "scaled/codec.hpp"
#include "scaled/error.hpp"
#include "scaled/json_util.hpp"
#include "scaled/media_io.hpp"
#include "scaled/train.hpp"

namespace scaled {

struct SourceSpec {
  std::string name;  // defaults to the file stem
  std::string dataset = "default";
  std::filesystem::path path;
  std::size_t width = 0;
  std::size_t height = 0;
  ChromaLayout layout = ChromaLayout::k420;
  std::size_t max_frames = 0;  // 0: all

  SequenceSource source() const {
    SequenceSource s;
    s.path = path;
    s.width = width;
    s.height = height;
    s.layout = layout;
    return s;
  }
};

struct DatasetConfig {
  std::vector<SourceSpec> sources;
  std::size_t patch = 64;
  std::size_t stride = 64;
  std::size_t heldout_patches = 0;
};

struct CalibrationConfig {
  std::size_t patches = 16;
  std::vector<int> qps{22, 27, 32, 37};
  double tau = 0.02;
};

struct TrainGrid {
  std::vector<Strategy> strategies{Strategy::kScaledD};
  std::vector<ScaleRatio> scales{{1, 2}};
  std::vector<int> qps{27};
  std::vector<double> lambdas{0.0};  // scaled-rd cells only
  std::size_t eval_every = 0;
  CalibrationConfig calibration;
  TrainConfig base;  // hyperparameters shared by all cells
};

struct SweepConfig {
  std::vector<SourceSpec> sequences;  // empty: the dataset sources
  std::vector<ScaleRatio> scales = default_evaluation_scales();
  std::vector<int> qps = default_evaluation_qps();
  std::vector<std::string> filters{"lanczos", "bicubic", "learned"};
};

struct ReportConfig {
  std::string reference = "lanczos";
  std::vector<std::string> metrics{"psnr_y", "psnr_weighted", "ssim_y"};
  std::filesystem::path scores;  // optional externally computed scores CSV
};

struct RunConfig {
  std::filesystem::path output_dir = "scaled-out";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  DatasetConfig dataset;
  CodecConfig codec;
  TrainGrid train;
  SweepConfig sweep;
  ReportConfig report;

  const std::vector<SourceSpec>& sweep_sequences() const {
    return sweep.sequences.empty() ? dataset.sources : sweep.sequences;
  }
};

namespace detail {

inline jsonu::json source_to_json(const SourceSpec& s) {
  return {{"name", s.name},     {"dataset", s.dataset},          {"path", s.path.string()},
          {"width", s.width},   {"height", s.height},            {"layout", to_string(s.layout)},
          {"max_frames", s.max_frames}};
}

inline SourceSpec source_from_json(const jsonu::json& j, const std::string& where) {
  jsonu::check_keys(j, {"name", "dataset", "path", "width", "height", "layout", "max_frames"}, where);
  SourceSpec s;
  std::string path, layout = "420";
  jsonu::read(j, "path", path, where);
  if (path.empty()) throw ConfigError(where + ".path is required");
  s.path = path;
  jsonu::read(j, "name", s.name, where);
  if (s.name.empty()) s.name = s.path.stem().string();
  jsonu::read(j, "dataset", s.dataset, where);
  jsonu::read(j, "width", s.width, where);
  jsonu::read(j, "height", s.height, where);
  jsonu::read(j, "layout", layout, where);
  if (layout == "420") s.layout = ChromaLayout::k420;
  else if (layout == "444") s.layout = ChromaLayout::k444;
  else throw ConfigError(where + ".layout must be \"420\" or \"444\", got \"" + layout + "\"");
  jsonu::read(j, "max_frames", s.max_frames, where);
  for (const auto* n : {&s.name, &s.dataset})
    if (n->find_first_of(",/\\\n") != std::string::npos) throw ConfigError(where + ": name '" + *n + "' has / , or newline");
  return s;
}

inline std::vector<SourceSpec> sources_from_json(const jsonu::json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<SourceSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(source_from_json(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::vector<ScaleRatio> scales_from_json(const jsonu::json& j, const std::string& where) {
  std::vector<std::string> text;
  jsonu::json wrap{{"v", j}};
  jsonu::read(wrap, "v", text, where);
  std::vector<ScaleRatio> out;
  for (const auto& t : text) {
    try {
      out.push_back(ScaleRatio::parse(t));
    } catch (const Error& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<std::string> scales_to_json(const std::vector<ScaleRatio>& v) {
  std::vector<std::string> out;
  for (const auto& s : v) out.push_back(s.str());
  return out;
}

}  // namespace detail

inline jsonu::json to_json(const RunConfig& c) {
  jsonu::json sources = jsonu::json::array(), sweep_seqs = jsonu::json::array();
  for (const auto& s : c.dataset.sources) sources.push_back(detail::source_to_json(s));
  for (const auto& s : c.sweep.sequences) sweep_seqs.push_back(detail::source_to_json(s));
  std::vector<std::string> strategies;
  for (auto s : c.train.strategies) strategies.push_back(to_string(s));

  auto hyper = to_json(c.train.base);
  for (const char* k : {"strategy", "scale", "codec", "lambda", "seed"}) hyper.erase(k);
  jsonu::json train{{"strategies", strategies},
                    {"scales", detail::scales_to_json(c.train.scales)},
                    {"qps", c.train.qps},
                    {"lambdas", c.train.lambdas},
                    {"eval_every", c.train.eval_every},
                    {"calibration",
                     {{"patches", c.train.calibration.patches},
                      {"qps", c.train.calibration.qps},
                      {"tau", c.train.calibration.tau}}}};
  train.update(hyper);
  return {{"output_dir", c.output_dir.string()},
          {"seed", c.seed},
          {"jobs", c.jobs},
          {"dataset",
           {{"sources", sources},
            {"patch", c.dataset.patch},
            {"stride", c.dataset.stride},
            {"heldout_patches", c.dataset.heldout_patches}}},
          {"codec", codec_to_json(c.codec)},
          {"train", train},
          {"sweep",
           {{"sequences", sweep_seqs},
            {"scales", detail::scales_to_json(c.sweep.scales)},
            {"qps", c.sweep.qps},
            {"filters", c.sweep.filters}}},
          {"report",
           {{"reference", c.report.reference}, {"metrics", c.report.metrics}, {"scores", c.report.scores.string()}}}};
}

inline RunConfig run_config_from_json(const jsonu::json& j) {
  RunConfig c;
  jsonu::check_keys(j, {"output_dir", "seed", "jobs", "dataset", "codec", "train", "sweep", "report"}, "");
  std::string text;
  if (j.contains("output_dir")) {
    jsonu::read(j, "output_dir", text, "");
    c.output_dir = text;
  }
  jsonu::read(j, "seed", c.seed, "");
  jsonu::read(j, "jobs", c.jobs, "");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    jsonu::check_keys(d, {"sources", "patch", "stride", "heldout_patches"}, "dataset");
    if (d.contains("sources")) c.dataset.sources = detail::sources_from_json(d.at("sources"), "dataset.sources");
    jsonu::read(d, "patch", c.dataset.patch, "dataset");
    jsonu::read(d, "stride", c.dataset.stride, "dataset");
    jsonu::read(d, "heldout_patches", c.dataset.heldout_patches, "dataset");
  }
  if (j.contains("codec")) codec_from_json(j.at("codec"), c.codec, "codec");

  if (j.contains("train")) {
    auto t = j.at("train");
    if (!t.is_object()) throw ConfigError("train: expected an object");
    jsonu::json grid = jsonu::json::object();
    for (const char* k : {"strategies", "scales", "qps", "lambdas", "eval_every", "calibration"}) {
      if (t.contains(k)) {
        grid[k] = t.at(k);
        t.erase(k);
      }
    }
    for (const char* k : {"strategy", "scale", "codec", "lambda", "seed"}) {
      if (t.contains(k)) throw ConfigError(std::string("unknown key 'train.") + k + "'");
    }
    c.train.base = train_config_from_json(t, c.train.base, "train");
    if (grid.contains("strategies")) {
      std::vector<std::string> names;
      jsonu::read(grid, "strategies", names, "train");
      c.train.strategies.clear();
      for (const auto& n : names) c.train.strategies.push_back(parse_strategy(n));
    }
    if (grid.contains("scales")) c.train.scales = detail::scales_from_json(grid.at("scales"), "train.scales");
    jsonu::read(grid, "qps", c.train.qps, "train");
    jsonu::read(grid, "lambdas", c.train.lambdas, "train");
    jsonu::read(grid, "eval_every", c.train.eval_every, "train");
    if (grid.contains("calibration")) {
      const auto& cal = grid.at("calibration");
      jsonu::check_keys(cal, {"patches", "qps", "tau"}, "train.calibration");
      jsonu::read(cal, "patches", c.train.calibration.patches, "train.calibration");
      jsonu::read(cal, "qps", c.train.calibration.qps, "train.calibration");
      jsonu::read(cal, "tau", c.train.calibration.tau, "train.calibration");
    }
  }

  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    jsonu::check_keys(s, {"sequences", "scales", "qps", "filters"}, "sweep");
    if (s.contains("sequences")) c.sweep.sequences = detail::sources_from_json(s.at("sequences"), "sweep.sequences");
    if (s.contains("scales")) c.sweep.scales = detail::scales_from_json(s.at("scales"), "sweep.scales");
    jsonu::read(s, "qps", c.sweep.qps, "sweep");
    jsonu::read(s, "filters", c.sweep.filters, "sweep");
  }
  if (j.contains("report")) {
    const auto& r = j.at("report");
    jsonu::check_keys(r, {"reference", "metrics", "scores"}, "report");
    jsonu::read(r, "reference", c.report.reference, "report");
    jsonu::read(r, "metrics", c.report.metrics, "report");
    text.clear();
    jsonu::read(r, "scores", text, "report");
    c.report.scores = text;
  }
  return c;
}

/// Value checks that need no filesystem access.
inline void validate(const RunConfig& c) {
  if (c.jobs == 0) throw ConfigError("jobs must be >= 1");
  if (c.dataset.patch == 0 || c.dataset.stride == 0) throw ConfigError("dataset.patch and dataset.stride must be >= 1");
  try {
    c.codec.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("codec: ") + e.what());
  }
  if (c.train.strategies.empty() || c.train.scales.empty() || c.train.qps.empty()) {
    throw ConfigError("train.strategies, train.scales and train.qps must be non-empty");
  }
  for (double l : c.train.lambdas)
    if (!(l >= 0) || !std::isfinite(l)) throw ConfigError("train.lambdas must be finite and >= 0");
  for (int q : c.train.qps)
    if (q < 0 || q > 51) throw ConfigError("train.qps: QP " + std::to_string(q) + " outside [0, 51]");
  for (int q : c.sweep.qps)
    if (q < 0 || q > 51) throw ConfigError("sweep.qps: QP " + std::to_string(q) + " outside [0, 51]");
  for (const auto& f : c.sweep.filters)
    if (f != "lanczos" && f != "bicubic" && f != "learned") {
      throw ConfigError("sweep.filters: unknown filter '" + f + "' (expected lanczos, bicubic or learned)");
    }
  if (c.train.calibration.tau <= 0) throw ConfigError("train.calibration.tau must be > 0");
  auto base = c.train.base;
  base.strategy = Strategy::kDOnly;
  base.lambda = 0;
  try {
    base.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  jsonu::json j;
  try {
    j = jsonu::json::parse(ss.str());
  } catch (const jsonu::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

/// Encoder and decoder fall back to SCALED_ENCODER / SCALED_DECODER when the
/// config leaves them at their defaults.
inline void apply_environment(RunConfig& c) {
  const CodecConfig defaults;
  if (const char* e = std::getenv("SCALED_ENCODER"); e && *e && c.codec.external.encoder == defaults.external.encoder) {
    c.codec.external.encoder = e;
  }
  if (const char* d = std::getenv("SCALED_DECODER"); d && *d && c.codec.external.decoder == defaults.external.decoder) {
    c.codec.external.decoder = d;
  }
}

}  // namespace scaled
