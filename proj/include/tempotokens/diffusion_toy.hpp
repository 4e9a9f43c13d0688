#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tempotokens/audio_analysis.hpp"
#include "tempotokens/binary.hpp"
#include "tempotokens/conditioning.hpp"
#include "tempotokens/errors.hpp"
#include "tempotokens/media_io.hpp"
#include "tempotokens/numerics.hpp"
#include "tempotokens/tempo_tokens.hpp"

namespace tempo {

// ---------------------------------------------------------------------------
// Noise schedule

/// Discrete linear-beta schedule; t is 1-based.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  static NoiseSchedule linear(std::size_t steps, double beta_start,
                              double beta_end) {
    if (steps == 0) {
      throw DomainError("schedule needs at least one step");
    }
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
      throw DomainError("schedule betas must satisfy 0 < start <= end < 1");
    }
    std::vector<double> betas(steps);
    for (std::size_t i = 0; i < steps; ++i) {
      betas[i] = steps == 1 ? beta_start
                            : beta_start + (beta_end - beta_start) * i / (steps - 1);
    }
    return from_betas(betas);
  }

  static NoiseSchedule from_betas(std::span<const double> betas) {
    if (betas.empty()) {
      throw DomainError("schedule needs at least one step");
    }
    NoiseSchedule s;
    double bar = 1.0;
    for (double b : betas) {
      if (!(b > 0.0 && b < 1.0)) {
        throw DomainError("schedule betas must lie in (0, 1)");
      }
      s.betas.push_back(b);
      s.alphas.push_back(1.0 - b);
      bar *= 1.0 - b;
      s.alpha_bars.push_back(bar);
    }
    return s;
  }

  /// The 1000-step DDPM endpoints (1e-4, 0.02) rescaled by 1000/T, which
  /// keeps the terminal signal level near zero for short schedules.
  static NoiseSchedule scaled_linear(std::size_t steps = 100) {
    const double scale = 1000.0 / static_cast<double>(steps);
    return linear(steps, 1e-4 * scale, std::min(0.02 * scale, 0.999));
  }

  std::size_t steps() const { return betas.size(); }

  void check(std::size_t t) const {
    if (t < 1 || t > steps()) {
      throw DomainError("timestep " + std::to_string(t) + " outside [1, " +
                        std::to_string(steps()) + "]");
    }
  }
  double beta(std::size_t t) const { check(t); return betas[t - 1]; }
  double alpha(std::size_t t) const { check(t); return alphas[t - 1]; }
  double alpha_bar(std::size_t t) const { check(t); return alpha_bars[t - 1]; }
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
inline std::vector<double> forward_noise(std::span<const double> z0,
                                         std::size_t t,
                                         std::span<const double> eps,
                                         const NoiseSchedule &schedule) {
  if (z0.size() != eps.size()) {
    throw ShapeError("forward_noise: eps shape differs from z0");
  }
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  std::vector<double> zt(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) {
    zt[i] = a * z0[i] + b * eps[i];
  }
  return zt;
}

// ---------------------------------------------------------------------------
// Latent codec

/// Fixed linear codec with orthonormal encoder rows. Pixels are mapped to
/// [-1, 1] before encoding; decoding is the transpose followed by the inverse
/// pixel map with clamping.
struct LatentCodec {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  Tensor encoder; // latent_dim x (width * height * 3)

  static LatentCodec random(std::uint32_t width, std::uint32_t height,
                            std::size_t latent_dim, Rng &rng) {
    const std::size_t pixels = static_cast<std::size_t>(width) * height * 3;
    if (latent_dim == 0 || latent_dim > pixels) {
      throw DomainError("latent dimension must be in [1, pixel count]");
    }
    LatentCodec c{width, height, rng.normal_tensor({latent_dim, pixels})};
    // Modified Gram-Schmidt, two passes.
    for (std::size_t pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < latent_dim; ++i) {
        auto ri = c.encoder.row(i);
        for (std::size_t j = 0; j < i; ++j) {
          const auto rj = c.encoder.row(j);
          const double proj = dot(ri, rj);
          for (std::size_t k = 0; k < pixels; ++k) {
            ri[k] -= proj * rj[k];
          }
        }
        const double n = norm2(ri);
        for (double &v : ri) {
          v /= n;
        }
      }
    }
    return c;
  }

  std::size_t latent_dim() const { return encoder.dim(0); }
  std::size_t pixel_dim() const { return encoder.dim(1); }

  std::vector<double> encode(std::span<const std::uint8_t> frame) const {
    if (frame.size() != pixel_dim()) {
      throw ShapeError("codec: frame size does not match codec dimensions");
    }
    std::vector<double> x(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i) {
      x[i] = frame[i] / 127.5 - 1.0;
    }
    std::vector<double> z(latent_dim());
    gemv(encoder.data(), latent_dim(), pixel_dim(), x, z);
    return z;
  }

  std::vector<std::uint8_t> decode(std::span<const double> z) const {
    std::vector<double> x(pixel_dim(), 0.0);
    gemv_t_acc(encoder.data(), latent_dim(), pixel_dim(), z, x);
    std::vector<std::uint8_t> frame(pixel_dim());
    for (std::size_t i = 0; i < x.size(); ++i) {
      frame[i] = static_cast<std::uint8_t>(
          std::clamp(std::lround((x[i] + 1.0) * 127.5), 0L, 255L));
    }
    return frame;
  }

  std::uint64_t fingerprint() const { return fnv1a(encoder.data()); }
};

// ---------------------------------------------------------------------------
// Frozen denoiser

struct DenoiserConfig {
  std::size_t latent_dim = 16;
  std::size_t token_dim = 32;
  std::size_t attn_dim = 16;
  std::size_t value_dim = 32;
  std::size_t time_dim = 8;
  std::size_t hidden = 128;
  std::size_t steps = 100;
  double prior_var = 0.1; // per-dimension prior variance of z_0 around m
};

struct DenoiserCache {
  std::vector<double> query;  // attn_dim
  std::vector<double> keys;   // tokens x attn_dim
  std::vector<double> values; // tokens x value_dim
  std::vector<double> weights;
  std::vector<double> input; // latent | time | summary
  std::vector<double> pre;   // hidden
  double gain = 0.0;         // d eps_hat / d m, per component
};

/// Per-frame conditional denoiser. An MLP over [z_t, temb(t), s] proposes a
/// clean latent m, where s is single-head cross-attention from z_t onto the
/// frame's condition tokens; eps_hat is the posterior mean of eps given z_t
/// under z_0 ~ N(m, prior_var I):
///   eps_hat = b (z_t - a m) / (a^2 prior_var + b^2),  a^2 = abar_t, b^2 = 1 - abar_t.
/// Weights are drawn once and never updated.
class ToyDenoiser {
public:
  ToyDenoiser() = default;

  static ToyDenoiser random(const DenoiserConfig &cfg,
                            const NoiseSchedule &schedule, Rng &rng) {
    if (schedule.steps() != cfg.steps) {
      throw ShapeError("denoiser: schedule length differs from config");
    }
    ToyDenoiser d;
    d.cfg_ = cfg;
    d.schedule_ = schedule;
    auto scaled = [&](std::size_t rows, std::size_t cols) {
      return rng.normal_tensor({rows, cols},
                               1.0 / std::sqrt(static_cast<double>(cols)));
    };
    d.query_ = scaled(cfg.attn_dim, cfg.latent_dim);
    d.key_ = scaled(cfg.attn_dim, cfg.token_dim);
    d.value_ = scaled(cfg.value_dim, cfg.token_dim);
    const std::size_t in = cfg.latent_dim + cfg.time_dim + cfg.value_dim;
    d.hidden_ = LinearLayer(scaled(cfg.hidden, in),
                            rng.normal_tensor({cfg.hidden}, 0.1));
    d.out_ = LinearLayer(scaled(cfg.latent_dim, cfg.hidden),
                         Tensor({cfg.latent_dim}));
    d.fingerprint_ = d.compute_fingerprint();
    return d;
  }

  const DenoiserConfig &config() const { return cfg_; }

  /// Hash recorded when the weights were created.
  std::uint64_t recorded_fingerprint() const { return fingerprint_; }
  std::uint64_t compute_fingerprint() const {
    std::uint64_t h = fnv1a(query_.data());
    h = fnv1a(key_.data(), h);
    h = fnv1a(value_.data(), h);
    h = fnv1a(hidden_.weight.data(), h);
    h = fnv1a(hidden_.bias.data(), h);
    h = fnv1a(out_.weight.data(), h);
    h = fnv1a(out_.bias.data(), h);
    return fnv1a(schedule_.betas, h);
  }

  std::vector<double> time_embedding(std::size_t t) const {
    std::vector<double> e(cfg_.time_dim);
    const double pos = static_cast<double>(t) / cfg_.steps;
    for (std::size_t i = 0; i < cfg_.time_dim; ++i) {
      const double freq = std::pow(64.0, static_cast<double>(i / 2) /
                                             std::max<std::size_t>(1, cfg_.time_dim / 2));
      e[i] = (i % 2 == 0) ? std::sin(pos * freq * 3.0) : std::cos(pos * freq * 3.0);
    }
    return e;
  }

  std::vector<double> predict(std::span<const double> zt, std::size_t t,
                              const std::vector<Token> &cond,
                              DenoiserCache *cache = nullptr) const {
    const auto &c = cfg_;
    if (zt.size() != c.latent_dim) {
      throw ShapeError("denoiser: latent width mismatch");
    }
    if (cond.empty() || cond.front().size() != c.token_dim) {
      throw ShapeError("denoiser: condition token width mismatch");
    }
    DenoiserCache local;
    DenoiserCache &k = cache ? *cache : local;
    const std::size_t n = cond.size();
    k.query.assign(c.attn_dim, 0.0);
    gemv(query_.data(), c.attn_dim, c.latent_dim, zt, k.query);
    k.keys.assign(n * c.attn_dim, 0.0);
    k.values.assign(n * c.value_dim, 0.0);
    std::vector<double> logits(n);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.attn_dim));
    for (std::size_t j = 0; j < n; ++j) {
      auto key = std::span<double>(k.keys).subspan(j * c.attn_dim, c.attn_dim);
      gemv(key_.data(), c.attn_dim, c.token_dim, cond[j], key);
      gemv(value_.data(), c.value_dim, c.token_dim, cond[j],
           std::span<double>(k.values).subspan(j * c.value_dim, c.value_dim));
      logits[j] = dot(k.query, key) * inv_sqrt;
    }
    k.weights = softmax(logits);

    k.input.assign(c.latent_dim + c.time_dim + c.value_dim, 0.0);
    std::copy(zt.begin(), zt.end(), k.input.begin());
    const auto temb = time_embedding(t);
    std::copy(temb.begin(), temb.end(), k.input.begin() + c.latent_dim);
    auto summary = std::span<double>(k.input).subspan(c.latent_dim + c.time_dim);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t m = 0; m < c.value_dim; ++m) {
        summary[m] += k.weights[j] * k.values[j * c.value_dim + m];
      }
    }

    k.pre.assign(hidden_.bias.values().begin(), hidden_.bias.values().end());
    gemv(hidden_.weight.data(), c.hidden, k.input.size(), k.input, k.pre, true);
    std::vector<double> act(c.hidden);
    for (std::size_t i = 0; i < c.hidden; ++i) {
      act[i] = gelu(k.pre[i]);
    }
    std::vector<double> m(out_.bias.values());
    gemv(out_.weight.data(), c.latent_dim, c.hidden, act, m, true);

    const double ab = schedule_.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    const double denom = ab * c.prior_var + (1.0 - ab);
    k.gain = -a * b / denom;
    std::vector<double> eps(c.latent_dim);
    for (std::size_t i = 0; i < c.latent_dim; ++i) {
      eps[i] = b / denom * zt[i] + k.gain * m[i];
    }
    return eps;
  }

  /// dL/d(condition tokens) given dL/d(prediction). Weights stay untouched.
  void backward_condition(const std::vector<Token> &cond,
                          const DenoiserCache &k,
                          std::span<const double> d_pred,
                          std::vector<Token> &d_cond) const {
    const auto &c = cfg_;
    const std::size_t n = cond.size();
    std::vector<double> d_m(d_pred.begin(), d_pred.end());
    for (double &v : d_m) {
      v *= k.gain;
    }
    std::vector<double> d_act(c.hidden, 0.0);
    gemv_t_acc(out_.weight.data(), c.latent_dim, c.hidden, d_m, d_act);
    for (std::size_t i = 0; i < c.hidden; ++i) {
      d_act[i] *= gelu_derivative(k.pre[i]);
    }
    std::vector<double> d_input(k.input.size(), 0.0);
    gemv_t_acc(hidden_.weight.data(), c.hidden, k.input.size(), d_act, d_input);
    const auto d_summary =
        std::span<const double>(d_input).subspan(c.latent_dim + c.time_dim);

    std::vector<double> d_w(n);
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      d_w[j] = dot(d_summary, std::span<const double>(k.values).subspan(
                                  j * c.value_dim, c.value_dim));
      mean += k.weights[j] * d_w[j];
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.attn_dim));
    d_cond.assign(n, Token(c.token_dim, 0.0));
    std::vector<double> d_key(c.attn_dim), d_val(c.value_dim);
    for (std::size_t j = 0; j < n; ++j) {
      const double d_logit = k.weights[j] * (d_w[j] - mean);
      for (std::size_t m = 0; m < c.attn_dim; ++m) {
        d_key[m] = d_logit * inv_sqrt * k.query[m];
      }
      for (std::size_t m = 0; m < c.value_dim; ++m) {
        d_val[m] = k.weights[j] * d_summary[m];
      }
      gemv_t_acc(key_.data(), c.attn_dim, c.token_dim, d_key, d_cond[j]);
      gemv_t_acc(value_.data(), c.value_dim, c.token_dim, d_val, d_cond[j]);
    }
  }

  template <class F> void for_each(F &&f) {
    f("denoiser.query", query_.data());
    f("denoiser.key", key_.data());
    f("denoiser.value", value_.data());
    f("denoiser.hidden.weight", hidden_.weight.data());
    f("denoiser.hidden.bias", hidden_.bias.data());
    f("denoiser.out.weight", out_.weight.data());
    f("denoiser.out.bias", out_.bias.data());
  }

  /// Rebuilds a denoiser from stored tensors (see for_each for the order).
  static ToyDenoiser from_tensors(const DenoiserConfig &cfg,
                                  const NoiseSchedule &schedule,
                                  std::vector<Tensor> t) {
    if (t.size() != 7) {
      throw FormatError("denoiser needs 7 tensors");
    }
    if (schedule.steps() != cfg.steps) {
      throw FormatError("denoiser: schedule length differs from config");
    }
    ToyDenoiser d;
    d.cfg_ = cfg;
    d.schedule_ = schedule;
    d.query_ = std::move(t[0]);
    d.key_ = std::move(t[1]);
    d.value_ = std::move(t[2]);
    d.hidden_ = LinearLayer(std::move(t[3]), std::move(t[4]));
    d.out_ = LinearLayer(std::move(t[5]), std::move(t[6]));
    d.fingerprint_ = d.compute_fingerprint();
    return d;
  }

  std::vector<Tensor> tensors() const {
    return {query_, key_, value_, hidden_.weight, hidden_.bias, out_.weight,
            out_.bias};
  }

private:
  DenoiserConfig cfg_;
  NoiseSchedule schedule_;
  Tensor query_;
  Tensor key_;
  Tensor value_;
  LinearLayer hidden_;
  LinearLayer out_;
  std::uint64_t fingerprint_ = 0;
};

// ---------------------------------------------------------------------------
// Losses

/// One video of a batch: per-frame clean latents and its condition sequence.
struct LatentClip {
  std::vector<std::vector<double>> latents; // L x d_z
};

struct CldmItem {
  const LatentClip *clip;
  const ConditioningSequence *cond;
};

/// Noise draws for one item, in the order the loss consumes them: t first,
/// then eps frame by frame.
struct NoiseDraw {
  std::size_t t = 1;
  std::vector<std::vector<double>> eps;
};

inline NoiseDraw draw_noise(std::size_t frames, std::size_t latent_dim,
                            const NoiseSchedule &schedule, Rng &rng) {
  NoiseDraw d;
  d.t = 1 + static_cast<std::size_t>(rng.below(schedule.steps()));
  d.eps.assign(frames, std::vector<double>(latent_dim));
  for (auto &e : d.eps) {
    for (double &v : e) {
      v = rng.normal();
    }
  }
  return d;
}

/// Mean over items and frames of ||eps - eps_hat||^2; frame i of each item is
/// denoised under its own c^(i). `Denoiser` needs
/// predict(z_t, t, tokens) -> eps_hat.
template <class Denoiser>
double cldm_loss(std::span<const CldmItem> batch, const Denoiser &denoiser,
                 const NoiseSchedule &schedule, Rng &rng) {
  double total = 0.0;
  std::size_t count = 0;
  for (const CldmItem &item : batch) {
    const auto &latents = item.clip->latents;
    if (item.cond->frame_count() != latents.size()) {
      throw ShapeError("cldm_loss: condition has " +
                       std::to_string(item.cond->frame_count()) +
                       " frames, video has " + std::to_string(latents.size()));
    }
    const NoiseDraw noise =
        draw_noise(latents.size(), latents.front().size(), schedule, rng);
    for (std::size_t i = 0; i < latents.size(); ++i) {
      const auto zt = forward_noise(latents[i], noise.t, noise.eps[i], schedule);
      const auto pred = denoiser.predict(zt, noise.t, item.cond->frames[i]);
      double se = 0.0;
      for (std::size_t k = 0; k < pred.size(); ++k) {
        const double d = noise.eps[i][k] - pred[k];
        se += d * d;
      }
      total += se;
      ++count;
    }
  }
  if (count == 0) {
    throw DomainError("cldm_loss: empty batch");
  }
  return total / static_cast<double>(count);
}

enum class ConditionMode { windows, single_vector };

/// A clip ready for training: latents of the sampled frames and the
/// normalised encoder activations for the same span.
struct TrainItem {
  LatentClip clip;
  AudioEmbeddings embeddings;
};

struct Adapter {
  MapperParams mapper;
  PoolingParams pooling;

  static Adapter zeros_like(const Adapter &a) {
    return {MapperParams::zeros_like(a.mapper),
            PoolingParams::zeros_like(a.pooling)};
  }

  template <class F> void for_each(F &&f) {
    mapper.for_each(f);
    pooling.for_each(f);
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    Adapter copy = *this;
    copy.for_each([&](std::string_view, std::span<double> v) { h = fnv1a(v, h); });
    return h;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    Adapter copy = *this;
    copy.for_each([&](std::string_view, std::span<double> v) {
      out.insert(out.end(), v.begin(), v.end());
    });
    return out;
  }

  void assign(std::span<const double> flat) {
    std::size_t k = 0;
    for_each([&](std::string_view, std::span<double> v) {
      for (double &x : v) {
        x = flat[k++];
      }
    });
  }
};

inline ConditioningSequence make_condition(const TempoTokens &tokens,
                                           const PoolingParams &pooling,
                                           ConditionMode mode,
                                           PoolingCache *cache = nullptr) {
  return mode == ConditionMode::windows ? build_condition(tokens, pooling, cache)
                                        : single_vector_condition(tokens);
}

/// L_CLDM plus the mean over items of the TempoTokens L1 penalty.
inline double total_loss(std::span<const TrainItem> batch, const Adapter &adapter,
                         const ToyDenoiser &denoiser,
                         const NoiseSchedule &schedule, double lambda_l1,
                         Rng &rng,
                         ConditionMode mode = ConditionMode::windows) {
  std::vector<ConditioningSequence> conds;
  double reg = 0.0;
  conds.reserve(batch.size());
  for (const TrainItem &item : batch) {
    const TempoTokens tokens = map_audio(item.embeddings, adapter.mapper);
    conds.push_back(make_condition(tokens, adapter.pooling, mode));
    reg += regularization(tokens, lambda_l1);
  }
  std::vector<CldmItem> items;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    items.push_back({&batch[b].clip, &conds[b]});
  }
  return cldm_loss<ToyDenoiser>(items, denoiser, schedule, rng) +
         reg / static_cast<double>(batch.size());
}

struct LossGrad {
  double loss = 0.0;
  Adapter grad;
};

/// total_loss and its gradient wrt every adapter parameter, backpropagated
/// through the frozen denoiser. Consumes rng exactly like total_loss.
inline LossGrad total_loss_grad(std::span<const TrainItem> batch,
                                const Adapter &adapter,
                                const ToyDenoiser &denoiser,
                                const NoiseSchedule &schedule, double lambda_l1,
                                Rng &rng,
                                ConditionMode mode = ConditionMode::windows) {
  if (batch.empty()) {
    throw DomainError("total_loss_grad: empty batch");
  }
  LossGrad out{0.0, Adapter::zeros_like(adapter)};
  std::size_t frames_total = 0;
  for (const TrainItem &item : batch) {
    frames_total += item.clip.latents.size();
  }
  const double inv_frames = 1.0 / static_cast<double>(frames_total);
  const double inv_items = 1.0 / static_cast<double>(batch.size());

  for (const TrainItem &item : batch) {
    MapperCache mcache;
    PoolingCache pcache;
    const TempoTokens tokens = map_audio(item.embeddings, adapter.mapper, &mcache);
    const ConditioningSequence cond =
        make_condition(tokens, adapter.pooling, mode, &pcache);
    const auto &latents = item.clip.latents;
    if (cond.frame_count() != latents.size()) {
      throw ShapeError("total_loss_grad: condition/video frame count mismatch");
    }
    out.loss += inv_items * regularization(tokens, lambda_l1);

    const NoiseDraw noise =
        draw_noise(latents.size(), latents.front().size(), schedule, rng);
    std::vector<std::vector<Token>> d_cond(latents.size());
    DenoiserCache dcache;
    for (std::size_t i = 0; i < latents.size(); ++i) {
      const auto zt = forward_noise(latents[i], noise.t, noise.eps[i], schedule);
      const auto pred = denoiser.predict(zt, noise.t, cond.frames[i], &dcache);
      std::vector<double> d_pred(pred.size());
      double se = 0.0;
      for (std::size_t k = 0; k < pred.size(); ++k) {
        const double d = pred[k] - noise.eps[i][k];
        se += d * d;
        d_pred[k] = 2.0 * d * inv_frames;
      }
      out.loss += se * inv_frames;
      denoiser.backward_condition(cond.frames[i], dcache, d_pred, d_cond[i]);
    }

    std::vector<double> d_tokens(tokens.values.size(), 0.0);
    if (mode == ConditionMode::windows) {
      build_condition_backward(tokens, adapter.pooling, pcache, d_cond,
                               d_tokens, out.grad.pooling);
    } else {
      const std::size_t width = tokens.token_width();
      const double inv = 1.0 / static_cast<double>(tokens.segments());
      for (const auto &frame : d_cond) {
        for (std::size_t s = 0; s < tokens.segments(); ++s) {
          for (std::size_t c = 0; c < width; ++c) {
            d_tokens[s * width + c] += inv * frame[0][c];
          }
        }
      }
    }
    regularization_backward(tokens, lambda_l1, inv_items, d_tokens);
    map_audio_backward(adapter.mapper, mcache, d_tokens, out.grad.mapper);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model, training and sampling

struct ModelConfig {
  std::size_t frames = 24;    // L: sampled frames and audio segments per clip
  std::size_t emb_layers = 2; // encoder layers in the embeddings
  std::size_t emb_dim = 16;
  std::size_t token_dim = 16; // d_t per layer; token width is emb_layers*d_t
  std::array<std::size_t, 3> mapper_hidden{512, 512, 512};
  std::size_t pool_local = 32;
  std::size_t pool_cross = 32;
  std::uint32_t width = 64;
  std::uint32_t height = 64;
  DenoiserConfig denoiser{};
  ConditionMode mode = ConditionMode::windows;

  std::size_t token_width() const { return emb_layers * token_dim; }
};

struct ToyModel {
  ModelConfig config;
  Adapter adapter;
  ToyDenoiser denoiser;
  LatentCodec codec;
  NoiseSchedule schedule;
  // Embeddings are standardised as (x - emb_shift) / emb_scale.
  double emb_shift = 0.0;
  double emb_scale = 1.0;

  /// Random initialisation; sub-streams are forked in the order mapper,
  /// pooling, denoiser, codec.
  static ToyModel init(ModelConfig cfg, std::uint64_t seed) {
    cfg.denoiser.token_dim = cfg.token_width();
    Rng root(seed);
    Rng mapper_rng = root.fork();
    Rng pool_rng = root.fork();
    Rng denoiser_rng = root.fork();
    Rng codec_rng = root.fork();
    ToyModel m;
    m.config = cfg;
    m.adapter.mapper =
        MapperParams::init(cfg.emb_layers * cfg.emb_dim, cfg.mapper_hidden,
                           cfg.token_width(), mapper_rng);
    m.adapter.pooling = PoolingParams::init(cfg.token_width(), cfg.pool_local,
                                            cfg.pool_cross, pool_rng);
    m.schedule = NoiseSchedule::scaled_linear(cfg.denoiser.steps);
    m.denoiser = ToyDenoiser::random(cfg.denoiser, m.schedule, denoiser_rng);
    m.codec = LatentCodec::random(cfg.width, cfg.height,
                                  cfg.denoiser.latent_dim, codec_rng);
    return m;
  }

  AudioEmbeddings normalise(AudioEmbeddings emb) const {
    for (double &v : emb.values.values()) {
      v = (v - emb_shift) / emb_scale;
    }
    return emb;
  }

  /// Stand-in encoder features for a clip's audio, standardised.
  AudioEmbeddings embed(const AudioSignal &audio) const {
    return normalise(toy_audio_features(audio, config.frames, config.emb_layers,
                                        config.emb_dim));
  }
};

/// Indices of `count` frames spread evenly over `total`.
inline std::vector<std::size_t> strided_frames(std::size_t total,
                                               std::size_t count) {
  if (total < count || count == 0) {
    throw ShapeError("clip has " + std::to_string(total) +
                     " frames, need at least " + std::to_string(count));
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) {
    idx[i] = i * total / count;
  }
  return idx;
}

/// Raw (unnormalised) training item for one clip.
inline TrainItem prepare_item(const Video &video, const AudioSignal &audio,
                              const ToyModel &model) {
  video.validate();
  if (video.width != model.codec.width || video.height != model.codec.height) {
    throw ShapeError("prepare_item: video is " + std::to_string(video.width) +
                     "x" + std::to_string(video.height) + ", codec expects " +
                     std::to_string(model.codec.width) + "x" +
                     std::to_string(model.codec.height));
  }
  TrainItem item;
  for (std::size_t f : strided_frames(video.frames.size(), model.config.frames)) {
    item.clip.latents.push_back(model.codec.encode(video.frames[f]));
  }
  item.embeddings = toy_audio_features(audio, model.config.frames,
                                       model.config.emb_layers,
                                       model.config.emb_dim);
  return item;
}

/// Fits the model's embedding standardisation on `items` and applies it.
inline void fit_normalisation(ToyModel &model, std::vector<TrainItem> &items) {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const TrainItem &it : items) {
    for (double v : it.embeddings.values.values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  if (n == 0) {
    throw DomainError("fit_normalisation: no embeddings");
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(sq / static_cast<double>(n) - mean * mean, 0.0);
  model.emb_shift = mean;
  model.emb_scale = var > 1e-24 ? std::sqrt(var) : 1.0;
  for (TrainItem &it : items) {
    it.embeddings = model.normalise(std::move(it.embeddings));
  }
}

enum class Optimizer { sgd, adamw };

struct TrainConfig {
  std::size_t batch_videos = 8;
  std::size_t steps = 0;
  double learning_rate = 1e-5;
  double lambda_l1 = 0.0;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::sgd;
  double weight_decay = 0.01; // AdamW only
  double beta1 = 0.9;
  double beta2 = 0.999;

  void validate() const {
    if (batch_videos == 0 || !(learning_rate > 0.0) || lambda_l1 < 0.0) {
      throw DomainError(
          "train: batch size and learning rate must be positive, lambda >= 0");
    }
  }
};

struct TrainResult {
  std::vector<double> history;
};

/// Mean of the first and last `window` entries.
inline std::pair<double, double> window_means(std::span<const double> history,
                                              std::size_t window) {
  if (history.empty()) {
    throw DomainError("window_means: empty history");
  }
  const std::size_t w = std::min(window, history.size());
  const double head =
      std::accumulate(history.begin(), history.begin() + w, 0.0) / w;
  const double tail =
      std::accumulate(history.end() - w, history.end(), 0.0) / w;
  return {head, tail};
}

/// Updates only the adapter. Batches are drawn from per-epoch shuffles of the
/// items; noise draws come from a stream forked off the same seed.
inline TrainResult train(ToyModel &model, std::span<const TrainItem> items,
                         const TrainConfig &cfg) {
  cfg.validate();
  TrainResult result;
  if (cfg.steps == 0) {
    return result;
  }
  if (items.empty()) {
    throw DomainError("train: empty dataset");
  }
  Rng root(cfg.seed);
  Rng order_rng = root.fork();
  Rng noise_rng = root.fork();

  std::vector<double> params = model.adapter.flatten();
  std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0);
  std::vector<std::size_t> order(items.size());
  std::size_t cursor = items.size();
  const std::size_t batch_size = std::min(cfg.batch_videos, items.size());
  std::vector<TrainItem> batch;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    batch.clear();
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[order_rng.below(i)]);
        }
        cursor = 0;
      }
      batch.push_back(items[order[cursor++]]);
    }
    LossGrad lg = total_loss_grad(batch, model.adapter, model.denoiser,
                                  model.schedule, cfg.lambda_l1, noise_rng,
                                  model.config.mode);
    const std::vector<double> grad = lg.grad.flatten();
    if (!std::isfinite(lg.loss) ||
        !std::all_of(grad.begin(), grad.end(),
                     [](double g) { return std::isfinite(g); })) {
      throw NumericError("train: non-finite loss or gradient at step " +
                         std::to_string(step));
    }
    result.history.push_back(lg.loss);
    if (cfg.optimizer == Optimizer::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= cfg.learning_rate * grad[i];
      }
    } else {
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(cfg.beta1, t);
      const double c2 = 1.0 - std::pow(cfg.beta2, t);
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        params[i] -= cfg.learning_rate *
                     (m[i] / c1 / (std::sqrt(v[i] / c2) + 1e-8) +
                      cfg.weight_decay * params[i]);
      }
    }
    model.adapter.assign(params);
  }
  return result;
}

/// Ancestral sampling, one latent per frame. The initial latent and the
/// per-step noise are shared by all frames, so frames differ only through
/// their conditions.
inline Video generate(const ToyModel &model, const AudioEmbeddings &embeddings,
                      Rational fps, std::uint64_t seed) {
  const TempoTokens tokens = map_audio(embeddings, model.adapter.mapper);
  const ConditioningSequence cond =
      make_condition(tokens, model.adapter.pooling, model.config.mode);
  const std::size_t frames = cond.frame_count();
  const std::size_t dz = model.codec.latent_dim();
  const NoiseSchedule &s = model.schedule;

  Rng rng(seed);
  std::vector<double> noise(dz);
  for (double &x : noise) {
    x = rng.normal();
  }
  std::vector<std::vector<double>> z(frames, noise);
  for (std::size_t t = s.steps(); t >= 1; --t) {
    for (double &x : noise) {
      x = rng.normal();
    }
    const double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    const double sigma = t > 1 ? std::sqrt(s.beta(t)) : 0.0;
    for (std::size_t i = 0; i < frames; ++i) {
      const auto eps = model.denoiser.predict(z[i], t, cond.frames[i]);
      for (std::size_t k = 0; k < dz; ++k) {
        z[i][k] = inv_sqrt_alpha * (z[i][k] - coef * eps[k]) + sigma * noise[k];
      }
    }
  }

  Video out;
  out.width = model.codec.width;
  out.height = model.codec.height;
  out.fps = fps;
  for (const auto &zi : z) {
    out.frames.push_back(model.codec.decode(zi));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

/// "TTCKPT1", u32 record count, then per record: u32 name length, name and a
/// TTE1 tensor block (shapes padded to rank 3 with leading ones). Values are
/// stored as binary32, so a loaded model is the float-rounded original.
namespace detail {

inline Tensor as_rank3(const Tensor &t) {
  std::vector<std::size_t> shape = t.shape();
  if (shape.size() > 3) {
    throw ShapeError("checkpoint tensors have rank <= 3");
  }
  while (shape.size() < 3) {
    shape.insert(shape.begin(), 1);
  }
  return Tensor(shape, t.values());
}

inline Tensor from_rank3(const Tensor &t, const std::vector<std::size_t> &shape) {
  if (Tensor::element_count(shape) != t.size()) {
    throw FormatError("checkpoint: tensor has " + std::to_string(t.size()) +
                      " values, expected " +
                      std::to_string(Tensor::element_count(shape)));
  }
  return Tensor(shape, t.values());
}

} // namespace detail

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> records;

  const Tensor &get(const std::string &name) const {
    for (const auto &[n, t] : records) {
      if (n == name) {
        return t;
      }
    }
    throw FormatError("checkpoint: missing record " + name);
  }
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint &ckpt) {
  binary::Writer w;
  w.bytes("TTCKPT1");
  w.u32(binary::to_u32(ckpt.records.size(), "record count"));
  for (const auto &[name, tensor] : ckpt.records) {
    w.u32(binary::to_u32(name.size(), "name length"));
    w.bytes(name);
    detail::write_rank3(w, "TTE1", detail::as_rank3(tensor));
  }
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "TTCKPT1");
  r.expect_magic("TTCKPT1");
  const std::size_t count = r.u32();
  Checkpoint ckpt;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = r.u32();
    const auto name = r.take(len);
    ckpt.records.emplace_back(std::string(name.begin(), name.end()),
                              detail::read_rank3(r, "TTE1"));
  }
  if (r.remaining() != 0) {
    throw FormatError("TTCKPT1: trailing bytes");
  }
  return ckpt;
}

inline Checkpoint to_checkpoint(const ToyModel &model) {
  const ModelConfig &c = model.config;
  const DenoiserConfig &d = c.denoiser;
  Checkpoint ckpt;
  ckpt.records.emplace_back(
      "meta.config",
      Tensor::vector({double(c.frames), double(c.emb_layers), double(c.emb_dim),
                      double(c.token_dim), double(c.mapper_hidden[0]),
                      double(c.mapper_hidden[1]), double(c.mapper_hidden[2]),
                      double(c.pool_local), double(c.pool_cross),
                      double(c.width), double(c.height), double(d.latent_dim),
                      double(d.attn_dim), double(d.value_dim),
                      double(d.time_dim), double(d.hidden), double(d.steps),
                      c.mode == ConditionMode::windows ? 0.0 : 1.0}));
  ckpt.records.emplace_back(
      "meta.scalars",
      Tensor::vector({model.emb_shift, model.emb_scale, d.prior_var}));
  ckpt.records.emplace_back("schedule.betas",
                            Tensor::vector(model.schedule.betas));
  Adapter adapter = model.adapter;
  adapter.for_each([&](std::string_view name, std::span<double> v) {
    ckpt.records.emplace_back(std::string(name),
                              Tensor::vector({v.begin(), v.end()}));
  });
  ToyDenoiser denoiser = model.denoiser;
  denoiser.for_each([&](std::string_view name, std::span<double> v) {
    ckpt.records.emplace_back(std::string(name),
                              Tensor::vector({v.begin(), v.end()}));
  });
  ckpt.records.emplace_back("codec.encoder", model.codec.encoder);
  return ckpt;
}

inline ToyModel from_checkpoint(const Checkpoint &ckpt) {
  const auto &meta = ckpt.get("meta.config").values();
  if (meta.size() != 18) {
    throw FormatError("checkpoint: meta.config has wrong length");
  }
  auto u = [&](std::size_t i) {
    if (meta[i] < 0.0 || meta[i] != std::floor(meta[i])) {
      throw FormatError("checkpoint: invalid config value");
    }
    return static_cast<std::size_t>(meta[i]);
  };
  ModelConfig c;
  c.frames = u(0);
  c.emb_layers = u(1);
  c.emb_dim = u(2);
  c.token_dim = u(3);
  c.mapper_hidden = {u(4), u(5), u(6)};
  c.pool_local = u(7);
  c.pool_cross = u(8);
  c.width = static_cast<std::uint32_t>(u(9));
  c.height = static_cast<std::uint32_t>(u(10));
  c.denoiser = {u(11), c.emb_layers * c.token_dim, u(12), u(13), u(14), u(15),
                u(16)};
  c.mode = u(17) == 0 ? ConditionMode::windows : ConditionMode::single_vector;
  const auto &scalars = ckpt.get("meta.scalars").values();
  if (scalars.size() != 3 || !(scalars[1] > 0.0) || !(scalars[2] > 0.0)) {
    throw FormatError("checkpoint: bad meta.scalars record");
  }
  c.denoiser.prior_var = scalars[2];

  ToyModel m;
  m.config = c;
  // Shapes come from a zero-initialised model of the same configuration.
  const std::array<std::size_t, 5> dims{c.emb_layers * c.emb_dim,
                                        c.mapper_hidden[0], c.mapper_hidden[1],
                                        c.mapper_hidden[2], c.token_width()};
  for (std::size_t i = 0; i < 4; ++i) {
    m.adapter.mapper.layers[i] = LinearLayer::zeros(dims[i], dims[i + 1]);
  }
  m.adapter.pooling.local_hidden = Tensor({c.pool_local, c.token_width()});
  m.adapter.pooling.local_score = Tensor({c.pool_local});
  m.adapter.pooling.cross_left = Tensor({c.pool_cross, c.token_width()});
  m.adapter.pooling.cross_right = Tensor({c.pool_cross, c.token_width()});
  m.adapter.for_each([&](std::string_view name, std::span<double> v) {
    const auto &t = ckpt.get(std::string(name));
    if (t.size() != v.size()) {
      throw FormatError("checkpoint: " + std::string(name) + " has " +
                        std::to_string(t.size()) + " values, expected " +
                        std::to_string(v.size()));
    }
    std::copy(t.values().begin(), t.values().end(), v.begin());
  });

  const DenoiserConfig &d = c.denoiser;
  const std::size_t in = d.latent_dim + d.time_dim + d.value_dim;
  const std::vector<std::vector<std::size_t>> shapes{
      {d.attn_dim, d.latent_dim}, {d.attn_dim, d.token_dim},
      {d.value_dim, d.token_dim}, {d.hidden, in},
      {d.hidden},                 {d.latent_dim, d.hidden},
      {d.latent_dim}};
  const char *names[] = {"denoiser.query",        "denoiser.key",
                         "denoiser.value",        "denoiser.hidden.weight",
                         "denoiser.hidden.bias",  "denoiser.out.weight",
                         "denoiser.out.bias"};
  std::vector<Tensor> tensors;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    tensors.push_back(detail::from_rank3(ckpt.get(names[i]), shapes[i]));
  }
  const auto &betas = ckpt.get("schedule.betas").values();
  if (betas.size() != d.steps) {
    throw FormatError("checkpoint: schedule length differs from config");
  }
  try {
    m.schedule = NoiseSchedule::from_betas(betas);
  } catch (const DomainError &e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  m.denoiser = ToyDenoiser::from_tensors(d, m.schedule, std::move(tensors));
  m.codec = LatentCodec{
      c.width, c.height,
      detail::from_rank3(ckpt.get("codec.encoder"),
                         {d.latent_dim, static_cast<std::size_t>(c.width) *
                                            c.height * 3})};
  m.emb_shift = scalars[0];
  m.emb_scale = scalars[1];
  return m;
}

inline void write_checkpoint(const ToyModel &model,
                             const std::filesystem::path &path) {
  binary::write_file(path, encode_checkpoint(to_checkpoint(model)));
}

inline ToyModel read_checkpoint(const std::filesystem::path &path) {
  return from_checkpoint(decode_checkpoint(binary::read_file(path)));
}

inline void write_loss_history(std::span<const double> history,
                               const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out.precision(17);
  for (double v : history) {
    out << v << "\n";
  }
}

} // namespace tempo
