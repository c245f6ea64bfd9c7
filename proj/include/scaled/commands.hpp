#pragma once

// The five CLI commands. Each returns a process exit code:
//   0 success, 1 usage or config error, 2 job failure, 3 verification failure.
// Everything is written below RunConfig::output_dir.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "scaled/checkpoint.hpp"
#include "scaled/config.hpp"
#include "scaled/eval.hpp"
#include "scaled/hash.hpp"
#include "scaled/media_io.hpp"
#include "scaled/parallel.hpp"
#include "scaled/rateproxy.hpp"
#include "scaled/train.hpp"
#include "scaled/verify.hpp"

namespace scaled {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitJobFailure = 2, kExitVerifyFailure = 3 };

namespace fs = std::filesystem;

struct OutputLayout {
  fs::path root;
  fs::path dataset() const { return root / "dataset"; }
  fs::path manifest() const { return dataset() / "manifest.json"; }
  fs::path patches() const { return dataset() / "patches.yuv"; }
  fs::path train() const { return root / "train"; }
  fs::path proxy() const { return train() / "rate_proxy.json"; }
  fs::path sweep() const { return root / "sweep"; }
  fs::path rd_csv() const { return sweep() / "rd.csv"; }
  fs::path report() const { return root / "report"; }
};

namespace detail {

inline void write_json(const fs::path& p, const jsonu::json& j) {
  fs::create_directories(p.parent_path());
  write_bytes_atomic(p, j.dump(2) + "\n");
}

inline jsonu::json read_json(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw IoError(what + " '" + p.string() + "' not found");
  const auto bytes = read_all(p);
  try {
    return jsonu::json::parse(bytes.begin(), bytes.end());
  } catch (const jsonu::json::parse_error& e) {
    throw IoError(what + " '" + p.string() + "' is not valid JSON: " + e.what());
  }
}

inline std::string read_text(const fs::path& p) {
  const auto bytes = read_all(p);
  return std::string(bytes.begin(), bytes.end());
}

/// Probes every source so that a bad path fails before any work starts.
inline std::vector<SequenceSource> check_sources(const std::vector<SourceSpec>& specs, const std::string& where) {
  if (specs.empty()) throw ConfigError(where + " is empty");
  std::vector<SequenceSource> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    try {
      out.push_back(probe(specs[i].source()));
    } catch (const IoError& e) {
      throw ConfigError(where + "[" + std::to_string(i) + "]: " + e.what());
    }
    if (out.back().frame_count == 0) throw ConfigError(where + "[" + std::to_string(i) + "]: no frames in '" +
                                                       specs[i].path.string() + "'");
  }
  return out;
}

inline std::vector<FramePlanar> load_source(const SourceSpec& spec) {
  FrameRange r;
  if (spec.max_frames) r.count = spec.max_frames;
  return read_frames(spec.source(), r);
}

inline std::string num_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// prepare

struct Manifest {
  std::size_t patch = 0;
  std::size_t train_count = 0;
  std::size_t heldout_count = 0;
  std::string patches_sha256;
};

inline Manifest load_manifest(const OutputLayout& out) {
  const auto j = detail::read_json(out.manifest(), "dataset manifest (run `scaled prepare` first)");
  Manifest m;
  try {
    m.patch = j.at("patch").get<std::size_t>();
    m.train_count = j.at("train_count").get<std::size_t>();
    m.heldout_count = j.at("heldout_count").get<std::size_t>();
    m.patches_sha256 = j.at("patches_sha256").get<std::string>();
  } catch (const jsonu::json::exception& e) {
    throw IoError("malformed manifest '" + out.manifest().string() + "': " + e.what());
  }
  return m;
}

/// Training and held-out patches, checked against the manifest hash.
inline std::pair<std::vector<FramePlanar>, std::vector<FramePlanar>> load_patches(const OutputLayout& out,
                                                                                    const Manifest& m) {
  if (sha256_file(out.patches()) != m.patches_sha256) {
    throw IoError("'" + out.patches().string() + "' does not match the manifest hash; rerun `scaled prepare`");
  }
  SequenceSource src;
  src.path = out.patches();
  src.width = src.height = m.patch;
  src.layout = ChromaLayout::k444;
  auto all = read_frames(src);
  if (all.size() != m.train_count + m.heldout_count) throw IoError("patch file and manifest disagree on patch count");
  std::vector<FramePlanar> held(all.begin() + static_cast<std::ptrdiff_t>(m.train_count), all.end());
  all.resize(m.train_count);
  return {std::move(all), std::move(held)};
}

inline int cmd_prepare(const RunConfig& cfg, std::ostream& log) {
  const OutputLayout out{cfg.output_dir};
  const auto probed = detail::check_sources(cfg.dataset.sources, "dataset.sources");

  jsonu::json sources = jsonu::json::array();
  std::vector<FramePlanar> frames;
  for (std::size_t i = 0; i < cfg.dataset.sources.size(); ++i) {
    const auto& spec = cfg.dataset.sources[i];
    auto f = detail::load_source(spec);
    for (auto& fr : f)
      if (fr.layout == ChromaLayout::k444) fr = simulate_chroma_degradation(fr);
    sources.push_back({{"name", spec.name},
                       {"path", spec.path.string()},
                       {"sha256", sha256_file(spec.path)},
                       {"width", probed[i].width},
                       {"height", probed[i].height},
                       {"layout", to_string(probed[i].layout)},
                       {"frames", f.size()}});
    frames.insert(frames.end(), std::make_move_iterator(f.begin()), std::make_move_iterator(f.end()));
  }
  const auto patches = extract_patches(frames, cfg.dataset.patch, cfg.dataset.stride, cfg.seed);
  if (patches.empty()) throw DomainError("no patches extracted");
  const std::size_t held = std::min(cfg.dataset.heldout_patches, patches.size() / 2);

  const auto bytes = encode_frames(patches, Container::kRaw);
  const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  fs::create_directories(out.dataset());
  write_bytes_atomic(out.patches(), view);
  const jsonu::json manifest{{"format", 1},
                             {"patch", cfg.dataset.patch},
                             {"stride", cfg.dataset.stride},
                             {"seed", cfg.seed},
                             {"patch_count", patches.size()},
                             {"train_count", patches.size() - held},
                             {"heldout_count", held},
                             {"layout", "444"},
                             {"patches_file", out.patches().filename().string()},
                             {"patches_sha256", sha256_hex(view)},
                             {"sources", sources}};
  detail::write_json(out.manifest(), manifest);
  log << "prepare: " << patches.size() << " patches (" << held << " held out) from " << frames.size()
      << " frames -> " << out.manifest().string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainCell {
  TrainConfig config;
  std::string id;
};

inline std::string cell_id(const TrainConfig& c) {
  std::string id = to_string(c.strategy) + "_s" + std::to_string(c.scale.num) + "-" + std::to_string(c.scale.den) +
                   "_qp" + std::to_string(c.codec.qp);
  if (c.strategy == Strategy::kScaledRd) id += "_lambda" + detail::num_label(c.lambda);
  return id;
}

inline std::vector<TrainCell> train_cells(const RunConfig& cfg) {
  std::vector<TrainCell> cells;
  for (auto strategy : cfg.train.strategies)
    for (const auto& scale : cfg.train.scales)
      for (int qp : cfg.train.qps) {
        const std::vector<double> lambdas =
            strategy == Strategy::kScaledRd ? cfg.train.lambdas : std::vector<double>{0.0};
        for (double lambda : lambdas) {
          TrainConfig c = cfg.train.base;
          c.strategy = strategy;
          c.scale = scale;
          c.lambda = lambda;
          c.seed = cfg.seed;
          c.codec = cfg.codec;
          c.codec.qp = qp;
          c.codec.qstep.reset();
          cells.push_back({c, cell_id(c)});
        }
      }
  return cells;
}

inline RateProxyParams calibrate_for_run(const RunConfig& cfg, const OutputLayout& out,
                                         const std::vector<FramePlanar>& train, std::ostream& log) {
  if (fs::exists(out.proxy())) {
    const auto j = detail::read_json(out.proxy(), "rate proxy");
    return detail::proxy_from_json(j.at("params"));
  }
  if (!codec_available(cfg.codec)) {
    throw CodecError("rate proxy calibration needs the codec, which is not available (encoder '" +
                     cfg.codec.external.encoder + "')");
  }
  std::vector<CodecConfig> settings;
  for (int qp : cfg.train.calibration.qps) {
    CodecConfig c = cfg.codec;
    c.qp = qp;
    c.qstep.reset();
    settings.push_back(c);
  }
  const std::size_t n = std::min(cfg.train.calibration.patches, train.size());
  const auto rep = calibrate(std::vector<FramePlanar>(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n)),
                             settings, cfg.train.calibration.tau);
  detail::write_json(out.proxy(), {{"params", detail::proxy_to_json(rep.params)},
                                   {"pearson", rep.pearson},
                                   {"spearman", rep.spearman},
                                   {"samples", rep.samples},
                                   {"encoder_version", codec_version(cfg.codec)}});
  log << "train: rate proxy a=" << rep.params.a << " b=" << rep.params.b << " (pearson " << rep.pearson
      << ", spearman " << rep.spearman << ")\n";
  return rep.params;
}

inline int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const OutputLayout out{cfg.output_dir};
  const auto manifest = load_manifest(out);
  const auto [train, heldout] = load_patches(out, manifest);
  const auto cells = train_cells(cfg);
  const bool have_codec = codec_available(cfg.codec);

  std::optional<RateProxyParams> proxy;
  std::string proxy_error;
  for (const auto& c : cells) {
    if (c.config.strategy != Strategy::kScaledRd || c.config.lambda == 0 || proxy || !proxy_error.empty()) continue;
    try {
      proxy = calibrate_for_run(cfg, out, train, log);
    } catch (const Error& e) {
      proxy_error = e.what();
    }
  }

  std::mutex mu;
  std::vector<std::string> failures;
  parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) {
    const auto& cell = cells[i];
    const fs::path dir = out.train() / cell.id;
    const fs::path ckpt = dir / "checkpoint.bin";
    auto report = [&](const std::string& msg, bool failed) {
      std::lock_guard lock(mu);
      log << "train: " << cell.id << ": " << msg << "\n";
      if (failed) failures.push_back(cell.id + ": " + msg);
    };
    if (fs::exists(ckpt)) {
      try {
        const auto existing = load_checkpoint(ckpt);
        if (to_json(existing.config) == to_json(cell.config)) {
          report("checkpoint present, skipped", false);
          return;
        }
      } catch (const Error&) {
      }
    }
    if (uses_codec(cell.config.strategy) && !have_codec) {
      report("codec not available (encoder '" + cfg.codec.external.encoder +
                 "'); only d-only cells can run without one",
             true);
      return;
    }
    const bool needs_proxy = cell.config.strategy == Strategy::kScaledRd && cell.config.lambda > 0;
    if (needs_proxy && !proxy) {
      report("no rate proxy: " + proxy_error, true);
      return;
    }
    try {
      fs::create_directories(dir);
      fs::remove(dir / "log.csv");
      TrainOptions opt;
      opt.heldout = heldout;
      opt.eval_every = cfg.train.eval_every;
      if (needs_proxy) opt.proxy = proxy;
      opt.log_path = dir / "log.csv";
      const auto ck = train_model(cell.config, train, opt);
      save_checkpoint(ck, ckpt);
      std::string msg = std::to_string(ck.history.size()) + " steps, final loss " +
                        detail::num_label(ck.history.empty() ? 0 : ck.history.back().loss);
      if (!ck.heldout.empty()) {
        msg += ", held-out post-codec mse " + detail::num_label(ck.heldout.front().post_codec_mse) + " -> " +
               detail::num_label(ck.heldout.back().post_codec_mse);
      }
      report(msg, false);
    } catch (const Error& e) {
      report(e.what(), true);
    }
  });
  if (!failures.empty()) {
    log << "train: " << failures.size() << " of " << cells.size() << " cells failed\n";
    return kExitJobFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct LoadedModel {
  fs::path path;
  Checkpoint ck;
};

inline std::string strategy_label(const TrainConfig& c) {
  if (c.strategy == Strategy::kScaledRd) return "scaled-rd@" + detail::num_label(c.lambda);
  return to_string(c.strategy);
}

inline std::vector<LoadedModel> load_trained_models(const OutputLayout& out) {
  std::vector<LoadedModel> models;
  if (!fs::exists(out.train())) return models;
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(out.train()))
    if (e.is_directory() && fs::exists(e.path() / "checkpoint.bin")) paths.push_back(e.path() / "checkpoint.bin");
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) models.push_back({p, load_checkpoint(p)});
  return models;
}

/// Model trained for the closest operating point: same scale when possible,
/// then nearest QP, then nearest scale.
inline const LoadedModel& pick_model(const std::vector<const LoadedModel*>& group, ScaleRatio s, int qp) {
  const LoadedModel* best = nullptr;
  std::tuple<double, int> best_key{1e9, 1 << 20};
  for (const auto* m : group) {
    const std::tuple<double, int> key{std::abs(m->ck.config.scale.value() - s.value()),
                                      std::abs(m->ck.config.codec.qp - qp)};
    if (!best || key < best_key) {
      best = m;
      best_key = key;
    }
  }
  return *best;
}

inline int cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  const OutputLayout out{cfg.output_dir};
  const auto& specs = cfg.sweep_sequences();
  detail::check_sources(specs, cfg.sweep.sequences.empty() ? "dataset.sources" : "sweep.sequences");
  if (!codec_available(cfg.codec)) {
    throw CodecError("sweep needs the codec, which is not available (encoder '" + cfg.codec.external.encoder + "')");
  }

  std::vector<LoadedModel> models;
  std::vector<SweepFilter> filters;
  jsonu::json used_models = jsonu::json::array();
  for (const auto& name : cfg.sweep.filters) {
    if (name == "lanczos") filters.push_back(lanczos_filter());
    if (name == "bicubic") filters.push_back(bicubic_filter());
  }
  if (std::find(cfg.sweep.filters.begin(), cfg.sweep.filters.end(), "learned") != cfg.sweep.filters.end()) {
    models = load_trained_models(out);
    if (models.empty()) {
      throw ConfigError("sweep.filters lists 'learned' but there are no checkpoints under '" + out.train().string() +
                        "'; run `scaled train` or drop it");
    }
    std::map<std::string, std::vector<const LoadedModel*>> groups;
    for (const auto& m : models) {
      groups[strategy_label(m.ck.config)].push_back(&m);
      used_models.push_back({{"path", fs::relative(m.path, out.root).string()}, {"sha256", sha256_file(m.path)}});
    }
    for (const auto& [label, group] : groups) {
      SweepFilter f;
      f.name = "learned";
      f.strategy = label;
      f.per_point = [group](ScaleRatio s, int qp) {
        const auto& m = pick_model(group, s, qp);
        return learned_filter("learned", "", m.ck.model).down;
      };
      filters.push_back(std::move(f));
    }
  }

  std::vector<SweepSequence> sequences;
  for (const auto& s : specs) sequences.push_back({s.dataset, s.name, detail::load_source(s)});
  SweepOptions opt;
  opt.scales = cfg.sweep.scales;
  opt.qps = cfg.sweep.qps;
  opt.codec = cfg.codec;
  opt.jobs = cfg.jobs;
  const auto res = rd_sweep(sequences, filters, opt);

  fs::create_directories(out.sweep());
  write_bytes_atomic(out.rd_csv(), rd_points_to_csv(res.points, res.encoder_version));
  std::string timings = "sequence,filter,strategy,scale,qp,seconds\n", failures;
  for (std::size_t i = 0; i < res.points.size(); ++i) {
    const auto& p = res.points[i];
    timings += p.sequence + "," + p.filter + "," + p.strategy + "," + p.scale.str() + "," + std::to_string(p.qp) + "," +
               csv::num(res.seconds[i]) + "\n";
  }
  for (const auto& f : res.failures) {
    failures += describe(f) + "\n";
    log << "sweep: failed " << describe(f) << "\n";
  }
  write_bytes_atomic(out.sweep() / "timings.csv", timings);
  write_bytes_atomic(out.sweep() / "failures.txt", failures);
  detail::write_json(out.sweep() / "provenance.json",
                     {{"encoder_version", res.encoder_version}, {"seed", cfg.seed}, {"models", used_models}});
  log << "sweep: " << res.points.size() << " points, " << res.failures.size() << " failures -> "
      << out.rd_csv().string() << "\n";
  return res.failures.empty() ? kExitOk : kExitJobFailure;
}

// ---------------------------------------------------------------------------
// report

inline int cmd_report(const RunConfig& cfg, std::ostream& log) {
  const OutputLayout out{cfg.output_dir};
  if (!fs::exists(out.rd_csv())) {
    throw IoError("no sweep results at '" + out.rd_csv().string() + "'; run `scaled sweep` first");
  }
  std::string encoder;
  auto points = rd_points_from_csv(detail::read_text(out.rd_csv()), &encoder);
  if (!cfg.report.scores.empty()) {
    if (!fs::exists(cfg.report.scores)) throw ConfigError("report.scores: no such file '" + cfg.report.scores.string() + "'");
    import_scores(points, detail::read_text(cfg.report.scores));
  }
  const auto rep = report_table(points, cfg.report.metrics, cfg.report.reference);
  fs::create_directories(out.report());
  write_bytes_atomic(out.report() / "bdbr.csv", report_to_csv(rep));
  write_bytes_atomic(out.report() / "bdbr_sequences.csv", per_sequence_to_csv(rep));
  const std::string text = report_to_text(rep) + "encoder: " + encoder + "\n";
  write_bytes_atomic(out.report() / "bdbr.txt", text);
  write_curves(points, out.report() / "curves", cfg.report.metrics);
  detail::write_json(out.report() / "provenance.json",
                     {{"encoder_version", encoder}, {"reference", cfg.report.reference}, {"seed", cfg.seed}});
  log << text;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

inline int cmd_verify(std::ostream& log, const VerifyOptions& opt = {}) {
  bool ok = true;
  for (const auto& r : run_verify(opt)) {
    log << format_suite(r) << "\n";
    ok &= r.passed;
  }
  log << (ok ? "verify: all suites passed\n" : "verify: FAILED\n");
  return ok ? kExitOk : kExitVerifyFailure;
}

/// Runs `fn` and maps library errors onto exit codes.
template <class Fn>
int run_command(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitJobFailure;
  }
}

}  // namespace scaled
