#pragma once

// Training objectives and the per-(QP, scale) Adam loop.
//
//   d-only     mse(x, up(f(x)))                      no codec
//   ste        mse(x, up(ste(f(x), codec)))          identity backward
//   scaled-d   mse(x, up(scaled(f(x), codec)))       sigma-ratio backward
//   scaled-rd  scaled-d + lambda * R_hat(f(x)) / (source pixels)

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scaled/codec.hpp"
#include "scaled/error.hpp"
#include "scaled/json_util.hpp"
#include "scaled/model.hpp"
#include "scaled/rateproxy.hpp"
#include "scaled/resample.hpp"
#include "scaled/rng.hpp"
#include "scaled/surrogate.hpp"
#include "scaled/tensor.hpp"

namespace scaled {

enum class Strategy { kDOnly, kSte, kScaledD, kScaledRd };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kDOnly: return "d-only";
    case Strategy::kSte: return "ste";
    case Strategy::kScaledD: return "scaled-d";
    case Strategy::kScaledRd: return "scaled-rd";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  for (auto v : {Strategy::kDOnly, Strategy::kSte, Strategy::kScaledD, Strategy::kScaledRd})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown strategy '" + s + "' (expected d-only, ste, scaled-d or scaled-rd)");
}

inline bool uses_codec(Strategy s) { return s != Strategy::kDOnly; }

struct TrainConfig {
  Strategy strategy = Strategy::kScaledD;
  ScaleRatio scale{1, 2};
  CodecConfig codec;
  double lambda = 0.0;
  std::size_t epochs = 100;
  std::size_t steps = 0;  // nonzero overrides epochs
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  SigmaScope sigma_scope = SigmaScope::kPerSample;
  double sigma_floor = 1e-6;
  ModelConfig model;

  SurrogateConfig surrogate() const {
    return {strategy == Strategy::kSte ? SurrogateMode::kSte : SurrogateMode::kScaled, sigma_scope, sigma_floor};
  }

  void validate() const {
    if (lambda < 0 || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
    // lambda = 0 is accepted for scaled-rd so that it can be compared with scaled-d.
    if (lambda > 0 && strategy != Strategy::kScaledRd) {
      throw ConfigError("lambda > 0 is only meaningful for the scaled-rd strategy, got " + to_string(strategy));
    }
    if (batch == 0) throw ConfigError("batch size must be >= 1");
    if (epochs == 0 && steps == 0) throw ConfigError("epochs or steps must be >= 1");
    if (!(lr > 0)) throw ConfigError("learning rate must be > 0");
    if (!(sigma_floor > 0)) throw ConfigError("sigma_floor must be > 0");
    if (scale.num > scale.den) throw ConfigError("training scale must be <= 1, got " + scale.str());
    codec.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON form of TrainConfig (checkpoints and run configs share it).

inline jsonu::json codec_to_json(const CodecConfig& c) {
  jsonu::json j{{"backend", to_string(c.backend)},
                {"qp", c.qp},
                {"preset", c.preset},
                {"encoder", c.external.encoder},
                {"decoder", c.external.decoder},
                {"extra_args", c.external.extra_args}};
  j["qstep"] = c.qstep ? jsonu::json(*c.qstep) : jsonu::json(nullptr);
  return j;
}

inline void codec_from_json(const jsonu::json& j, CodecConfig& c, const std::string& where) {
  jsonu::check_keys(j, {"backend", "qp", "qstep", "preset", "encoder", "decoder", "extra_args", "temp_dir"}, where);
  if (j.contains("backend")) {
    try {
      c.backend = parse_codec_backend(j.at("backend").get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(where + ".backend: " + e.what());
    }
  }
  jsonu::read(j, "qp", c.qp, where);
  if (j.contains("qstep")) {
    if (j.at("qstep").is_null()) {
      c.qstep.reset();
    } else {
      double q = 0;
      jsonu::read(j, "qstep", q, where);
      c.qstep = q;
    }
  }
  jsonu::read(j, "preset", c.preset, where);
  jsonu::read(j, "encoder", c.external.encoder, where);
  jsonu::read(j, "decoder", c.external.decoder, where);
  jsonu::read(j, "extra_args", c.external.extra_args, where);
  std::string tmp;
  jsonu::read(j, "temp_dir", tmp, where);
  if (!tmp.empty()) c.external.temp_dir = tmp;
}

inline jsonu::json to_json(const TrainConfig& c) {
  return {{"strategy", to_string(c.strategy)},
          {"scale", c.scale.str()},
          {"codec", codec_to_json(c.codec)},
          {"lambda", c.lambda},
          {"epochs", c.epochs},
          {"steps", c.steps},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"batch", c.batch},
          {"seed", c.seed},
          {"sigma_scope", to_string(c.sigma_scope)},
          {"sigma_floor", c.sigma_floor},
          {"model",
           {{"hidden", c.model.hidden}, {"layers", c.model.layers}, {"kernel", c.model.kernel}, {"slope", c.model.slope}}}};
}

inline TrainConfig train_config_from_json(const jsonu::json& j, TrainConfig c = {}, const std::string& where = "train") {
  jsonu::check_keys(j,
                    {"strategy", "scale", "codec", "lambda", "epochs", "steps", "lr", "beta1", "beta2", "adam_eps",
                     "batch", "seed", "sigma_scope", "sigma_floor", "model"},
                    where);
  std::string text;
  if (j.contains("strategy")) {
    jsonu::read(j, "strategy", text, where);
    c.strategy = parse_strategy(text);
  }
  if (j.contains("scale")) {
    jsonu::read(j, "scale", text, where);
    try {
      c.scale = ScaleRatio::parse(text);
    } catch (const Error& e) {
      throw ConfigError(where + ".scale: " + e.what());
    }
  }
  if (j.contains("codec")) codec_from_json(j.at("codec"), c.codec, where + ".codec");
  jsonu::read(j, "lambda", c.lambda, where);
  jsonu::read(j, "epochs", c.epochs, where);
  jsonu::read(j, "steps", c.steps, where);
  jsonu::read(j, "lr", c.lr, where);
  jsonu::read(j, "beta1", c.beta1, where);
  jsonu::read(j, "beta2", c.beta2, where);
  jsonu::read(j, "adam_eps", c.adam_eps, where);
  jsonu::read(j, "batch", c.batch, where);
  jsonu::read(j, "seed", c.seed, where);
  if (j.contains("sigma_scope")) {
    jsonu::read(j, "sigma_scope", text, where);
    try {
      c.sigma_scope = parse_sigma_scope(text);
    } catch (const Error& e) {
      throw ConfigError(where + ".sigma_scope: " + e.what());
    }
  }
  jsonu::read(j, "sigma_floor", c.sigma_floor, where);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    jsonu::check_keys(m, {"hidden", "layers", "kernel", "slope"}, where + ".model");
    jsonu::read(m, "hidden", c.model.hidden, where + ".model");
    jsonu::read(m, "layers", c.model.layers, where + ".model");
    jsonu::read(m, "kernel", c.model.kernel, where + ".model");
    jsonu::read(m, "slope", c.model.slope, where + ".model");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Losses

template <class T>
struct LossTerms {
  Tensor<T> loss;
  double distortion = 0;  // mse against the source, true codec output when a codec is used
  double rate_bpp = 0;    // R_hat per source pixel (0 when not evaluated)
  double rate_term = 0;   // lambda * rate_bpp
  double y_l1 = 0;        // mean |f(x)|
  std::uint64_t codec_bits = 0;
  SurrogateDiagnostics diag;
};

/// Codec round trip of every item of an N x 3 x h x w tensor, one frame per call.
template <class T>
std::pair<Tensor<T>, std::uint64_t> codec_round_trip(const Tensor<T>& y, const CodecConfig& codec) {
  const auto frames = tensor_to_frames(y);
  std::vector<FramePlanar> recon;
  std::uint64_t bits = 0;
  for (const auto& f : frames) {
    auto r = encode_decode({f}, codec);
    bits += r.bits;
    recon.push_back(std::move(r.recon.front()));
  }
  return {frames_to_tensor<T>(recon), bits};
}

namespace detail {

template <class T>
double mean_abs(const Tensor<T>& y) {
  Accum<T> acc{0};
  for (T v : y.data()) acc += std::abs(v);
  return static_cast<double>(acc) / static_cast<double>(y.size());
}

}  // namespace detail

/// Shared implementation of the four objectives.
template <class T>
LossTerms<T> compute_loss(Tape<T>& tape, const Tensor<T>& x, std::span<const Tensor<T>> params, const TrainConfig& cfg,
                          const RateProxyParams* proxy) {
  const std::size_t h = x.dim(2), w = x.dim(3);
  LossTerms<T> out;
  const Tensor<T> y = forward(tape, x, params, cfg.model, cfg.scale);
  out.y_l1 = detail::mean_abs(y);
  Tensor<T> decoded = y;
  if (uses_codec(cfg.strategy)) {
    auto [recon, bits] = codec_round_trip(y, cfg.codec);
    out.codec_bits = bits;
    decoded = apply(tape, y, recon, cfg.surrogate(), out.diag);
  }
  const Tensor<T> dist = mse(tape, bicubic_upsample(tape, decoded, h, w), x);
  out.distortion = static_cast<double>(dist.item());
  out.loss = dist;
  if (cfg.strategy == Strategy::kScaledRd && cfg.lambda > 0) {
    if (!proxy || !proxy->calibrated) throw DomainError("scaled-rd needs a calibrated rate proxy");
    const T per_pixel = static_cast<T>(1.0 / static_cast<double>(x.dim(0) * h * w));
    const Tensor<T> rate = affine(tape, rate_estimate(tape, y, *proxy), per_pixel);
    out.rate_bpp = static_cast<double>(rate.item());
    out.rate_term = cfg.lambda * out.rate_bpp;
    out.loss = add(tape, dist, affine(tape, rate, static_cast<T>(cfg.lambda)));
  }
  return out;
}

template <class T>
LossTerms<T> loss_d_only(Tape<T>& tape, const Tensor<T>& x, std::span<const Tensor<T>> params, const ModelConfig& m,
                         ScaleRatio s) {
  TrainConfig c;
  c.strategy = Strategy::kDOnly;
  c.model = m;
  c.scale = s;
  return compute_loss<T>(tape, x, params, c, nullptr);
}

template <class T>
LossTerms<T> loss_ste(Tape<T>& tape, const Tensor<T>& x, std::span<const Tensor<T>> params, const ModelConfig& m,
                      ScaleRatio s, const CodecConfig& codec) {
  TrainConfig c;
  c.strategy = Strategy::kSte;
  c.model = m;
  c.scale = s;
  c.codec = codec;
  return compute_loss<T>(tape, x, params, c, nullptr);
}

template <class T>
LossTerms<T> loss_scaled_d(Tape<T>& tape, const Tensor<T>& x, std::span<const Tensor<T>> params, const ModelConfig& m,
                           ScaleRatio s, const CodecConfig& codec, const SurrogateConfig& sur = {}) {
  TrainConfig c;
  c.strategy = Strategy::kScaledD;
  c.model = m;
  c.scale = s;
  c.codec = codec;
  c.sigma_scope = sur.scope;
  c.sigma_floor = sur.sigma_floor;
  return compute_loss<T>(tape, x, params, c, nullptr);
}

template <class T>
LossTerms<T> loss_scaled_rd(Tape<T>& tape, const Tensor<T>& x, std::span<const Tensor<T>> params, const ModelConfig& m,
                            ScaleRatio s, const CodecConfig& codec, const SurrogateConfig& sur,
                            const RateProxyParams& proxy, double lambda) {
  if (!proxy.calibrated) throw DomainError("scaled-rd needs a calibrated rate proxy");
  TrainConfig c;
  c.strategy = Strategy::kScaledRd;
  c.model = m;
  c.scale = s;
  c.codec = codec;
  c.sigma_scope = sur.scope;
  c.sigma_floor = sur.sigma_floor;
  c.lambda = lambda;
  return compute_loss<T>(tape, x, params, c, &proxy);
}

// ---------------------------------------------------------------------------
// Training loop

struct StepRecord {
  std::uint64_t step = 0;
  double loss = 0;
  double distortion = 0;
  double rate_term = 0;
  double y_l1 = 0;
  std::uint64_t fallbacks = 0;
  double wall_seconds = 0;  // CSV only, not part of checkpoints

  bool operator==(const StepRecord& o) const {
    return step == o.step && loss == o.loss && distortion == o.distortion && rate_term == o.rate_term &&
           y_l1 == o.y_l1 && fallbacks == o.fallbacks;
  }
};

struct HeldOutRecord {
  std::uint64_t step = 0;
  double post_codec_mse = 0;
  bool operator==(const HeldOutRecord&) const = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ProgDownLite<float> model;
  TrainConfig config;
  std::optional<RateProxyParams> proxy;
  std::vector<StepRecord> history;
  std::vector<HeldOutRecord> heldout;
  std::string encoder_version;
  std::uint32_t version = kFormatVersion;
};

/// Mean over `frames` of mse(x, up(codec(f(x)))), evaluated one item at a time.
inline double heldout_post_codec_mse(const ProgDownLite<float>& model, const std::vector<FramePlanar>& frames,
                                     ScaleRatio scale, const CodecConfig& codec) {
  if (frames.empty()) throw DomainError("held-out set is empty");
  double total = 0;
  for (const auto& f : frames) {
    Tape<float> tape;
    const auto x = frames_to_tensor<float>({f});
    const auto y = forward(tape, x, model, scale);
    const auto recon = codec_round_trip(y, codec).first;
    total += mse(tape, bicubic_upsample(tape, recon, x.dim(2), x.dim(3)), x).item();
  }
  return total / static_cast<double>(frames.size());
}

/// Mean soft_l0 of the luma DCT of f(x) over `frames` (before any codec).
inline double mean_output_soft_l0(const ProgDownLite<float>& model, const std::vector<FramePlanar>& frames,
                                  ScaleRatio scale, double tau) {
  double total = 0;
  for (const auto& f : frames) {
    Tape<float> tape;
    const auto y = forward(tape, frames_to_tensor<float>({f}), model, scale);
    total += soft_l0_of_frame(tensor_to_frames(y).front(), tau);
  }
  return total / static_cast<double>(frames.size());
}

struct TrainOptions {
  std::vector<FramePlanar> heldout;
  std::size_t eval_every = 0;  // 0: evaluate before and after training only
  std::optional<RateProxyParams> proxy;
  std::filesystem::path log_path;  // append-only CSV; empty disables
  std::function<void(const StepRecord&)> on_step;
};

inline constexpr const char* kTrainLogHeader = "step,loss,distortion,rate_term,y_l1,fallbacks,wall_seconds";

namespace detail {

inline void check_finite(const StepRecord& r, const std::vector<std::vector<float>>& grads,
                         const std::vector<std::string>& names) {
  auto fail = [&](const std::string& what) {
    throw TrainingDiverged("non-finite " + what + " at step " + std::to_string(r.step) + " (loss " +
                           std::to_string(r.loss) + ", distortion " + std::to_string(r.distortion) + ", rate term " +
                           std::to_string(r.rate_term) + ", |y| " + std::to_string(r.y_l1) + ")");
  };
  if (!std::isfinite(r.loss)) fail("loss");
  for (std::size_t k = 0; k < grads.size(); ++k)
    for (float g : grads[k])
      if (!std::isfinite(g)) fail("gradient in " + names[k]);
}

}  // namespace detail

/// Adam training of one (strategy, scale, codec setting) cell.
inline Checkpoint train_model(const TrainConfig& cfg, const std::vector<FramePlanar>& dataset,
                              const TrainOptions& opt = {}) {
  cfg.validate();
  if (dataset.empty()) throw DomainError("training dataset is empty");
  const RateProxyParams* proxy = nullptr;
  if (cfg.strategy == Strategy::kScaledRd && cfg.lambda > 0) {
    if (!opt.proxy || !opt.proxy->calibrated) throw DomainError("scaled-rd needs a calibrated rate proxy");
    proxy = &*opt.proxy;
  }

  Checkpoint ck;
  ck.config = cfg;
  ck.proxy = opt.proxy;
  ck.model = init_params(cfg.seed, cfg.model);
  if (uses_codec(cfg.strategy)) ck.encoder_version = codec_version(cfg.codec);

  std::ofstream log;
  if (!opt.log_path.empty()) {
    const bool fresh = !std::filesystem::exists(opt.log_path) || std::filesystem::file_size(opt.log_path) == 0;
    log.open(opt.log_path, std::ios::app);
    if (!log) throw IoError("cannot open training log '" + opt.log_path.string() + "'");
    if (fresh) log << kTrainLogHeader << "\n";
  }

  const bool can_eval = !opt.heldout.empty() && codec_available(cfg.codec);
  auto evaluate = [&](std::uint64_t step) {
    if (can_eval) ck.heldout.push_back({step, heldout_post_codec_mse(ck.model, opt.heldout, cfg.scale, cfg.codec)});
  };

  const std::size_t per_epoch = (dataset.size() + cfg.batch - 1) / cfg.batch;
  const std::size_t total = cfg.steps ? cfg.steps : cfg.epochs * per_epoch;
  AdamState<float> adam;
  adam.lr = static_cast<float>(cfg.lr);
  adam.beta1 = static_cast<float>(cfg.beta1);
  adam.beta2 = static_cast<float>(cfg.beta2);
  adam.epsilon = static_cast<float>(cfg.adam_eps);

  CounterRng shuffle_rng(cfg.seed, 0x73687566ULL);
  std::vector<std::size_t> order(dataset.size());
  const auto t0 = std::chrono::steady_clock::now();
  evaluate(0);
  for (std::size_t step = 0; step < total; ++step) {
    const std::size_t slot = step % per_epoch;
    if (slot == 0) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      shuffle_rng.shuffle(std::span<std::size_t>(order));
    }
    std::vector<FramePlanar> batch;
    for (std::size_t i = slot * cfg.batch; i < std::min(order.size(), (slot + 1) * cfg.batch); ++i) {
      batch.push_back(dataset[order[i]]);
    }
    const auto x = frames_to_tensor<float>(batch);

    Tape<float> tape;
    const auto params = ck.model.bind(tape);
    StepRecord rec;
    rec.step = step + 1;
    LossTerms<float> terms;
    try {
      terms = compute_loss<float>(tape, x, params, cfg, proxy);
    } catch (const CodecError& e) {
      throw CodecError("codec failure at training step " + std::to_string(step + 1) + ": " + e.what());
    }
    rec.loss = terms.loss.item();
    rec.distortion = terms.distortion;
    rec.rate_term = terms.rate_term;
    rec.y_l1 = terms.y_l1;
    rec.fallbacks = terms.diag.fallbacks;

    std::vector<std::vector<float>> grads;
    if (std::isfinite(rec.loss)) {
      const auto g = tape.backward(terms.loss);
      for (const auto& p : params) grads.push_back(g.of(p));
    }
    detail::check_finite(rec, grads, ck.model.names);
    adam_step<float>(ck.model.tensors, grads, adam);

    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.history.push_back(rec);
    if (log) {
      log << rec.step << ',' << rec.loss << ',' << rec.distortion << ',' << rec.rate_term << ',' << rec.y_l1 << ','
          << rec.fallbacks << ',' << rec.wall_seconds << '\n';
    }
    if (opt.on_step) opt.on_step(rec);
    if (opt.eval_every && rec.step % opt.eval_every == 0 && rec.step != total) evaluate(rec.step);
  }
  evaluate(total);
  return ck;
}

}  // namespace scaled
