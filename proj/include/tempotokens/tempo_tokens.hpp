#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tempotokens/conditioning.hpp"
#include "tempotokens/errors.hpp"
#include "tempotokens/media_io.hpp"
#include "tempotokens/numerics.hpp"

namespace tempo {

// ---------------------------------------------------------------------------
// Parameters

/// Four linear layers with GELU between them, shared across segments.
struct MapperParams {
  std::array<LinearLayer, 4> layers;

  /// Normal(0, 1/fan_in) weights, zero biases.
  static MapperParams init(std::size_t in, std::array<std::size_t, 3> hidden,
                           std::size_t out, Rng &rng) {
    MapperParams p;
    const std::array<std::size_t, 5> dims{in, hidden[0], hidden[1], hidden[2],
                                          out};
    for (std::size_t i = 0; i < 4; ++i) {
      p.layers[i] = LinearLayer(
          rng.normal_tensor({dims[i + 1], dims[i]},
                            1.0 / std::sqrt(static_cast<double>(dims[i]))),
          Tensor({dims[i + 1]}));
    }
    return p;
  }

  static MapperParams zeros_like(const MapperParams &other) {
    MapperParams p;
    for (std::size_t i = 0; i < 4; ++i) {
      p.layers[i] = LinearLayer::zeros(other.layers[i].in_dim(),
                                       other.layers[i].out_dim());
    }
    return p;
  }

  std::size_t input_dim() const { return layers[0].in_dim(); }
  std::size_t output_dim() const { return layers[3].out_dim(); }

  template <class F> void for_each(F &&f) {
    for (std::size_t i = 0; i < 4; ++i) {
      f("mapper." + std::to_string(i) + ".weight", layers[i].weight.data());
      f("mapper." + std::to_string(i) + ".bias", layers[i].bias.data());
    }
  }

  friend bool operator==(const MapperParams &, const MapperParams &) = default;
};

/// Attentive pooling parameters. `local_hidden` is V_l (h_p x D),
/// `local_score` is v_l (h_p), `cross_left`/`cross_right` are W_1/W_2
/// (h_c x D).
struct PoolingParams {
  Tensor local_hidden;
  Tensor local_score;
  Tensor cross_left;
  Tensor cross_right;
  double alpha_local = 1.0;
  double alpha_cross = 1.0;

  static PoolingParams init(std::size_t token_dim, std::size_t h_p,
                            std::size_t h_c, Rng &rng) {
    if (h_p == 0 || h_c == 0) {
      throw DomainError("pooling hidden sizes must be >= 1");
    }
    const double s = 1.0 / std::sqrt(static_cast<double>(token_dim));
    PoolingParams p;
    p.local_hidden = rng.normal_tensor({h_p, token_dim}, s);
    p.local_score =
        rng.normal_tensor({h_p}, 1.0 / std::sqrt(static_cast<double>(h_p)));
    p.cross_left = rng.normal_tensor({h_c, token_dim}, s);
    p.cross_right = rng.normal_tensor({h_c, token_dim}, s);
    return p;
  }

  static PoolingParams zeros_like(const PoolingParams &o) {
    PoolingParams p;
    p.local_hidden = Tensor(o.local_hidden.shape());
    p.local_score = Tensor(o.local_score.shape());
    p.cross_left = Tensor(o.cross_left.shape());
    p.cross_right = Tensor(o.cross_right.shape());
    p.alpha_local = 0.0;
    p.alpha_cross = 0.0;
    return p;
  }

  std::size_t token_dim() const { return local_hidden.dim(1); }
  std::size_t local_dim() const { return local_hidden.dim(0); }
  std::size_t cross_dim() const { return cross_left.dim(0); }

  void validate() const {
    if (local_hidden.rank() != 2 || local_score.rank() != 1 ||
        cross_left.rank() != 2 || cross_right.rank() != 2 ||
        local_score.dim(0) != local_hidden.dim(0) ||
        cross_left.shape() != cross_right.shape() ||
        cross_left.dim(1) != local_hidden.dim(1)) {
      throw ShapeError("pooling parameter dimensions inconsistent");
    }
  }

  template <class F> void for_each(F &&f) {
    f("pool.local_hidden", local_hidden.data());
    f("pool.local_score", local_score.data());
    f("pool.cross_left", cross_left.data());
    f("pool.cross_right", cross_right.data());
    f("pool.alpha_local", std::span<double>(&alpha_local, 1));
    f("pool.alpha_cross", std::span<double>(&alpha_cross, 1));
  }

  friend bool operator==(const PoolingParams &, const PoolingParams &) = default;
};

/// L x H_layers x d_t; token u is the flattened row u.
struct TempoTokens {
  Tensor values;

  std::size_t segments() const { return values.dim(0); }
  std::size_t layers() const { return values.dim(1); }
  std::size_t dim() const { return values.dim(2); }
  std::size_t token_width() const { return layers() * dim(); }
  std::span<const double> token(std::size_t u) const { return values.row(u); }
};

// ---------------------------------------------------------------------------
// AudioMapper

/// Activations kept for the backward pass: per layer, L x width buffers of
/// pre-activations (`pre`) and layer inputs (`in`).
struct MapperCache {
  std::size_t segments = 0;
  std::array<std::vector<double>, 4> in;
  std::array<std::vector<double>, 4> pre;
};

inline TempoTokens map_audio(const AudioEmbeddings &emb,
                             const MapperParams &params,
                             MapperCache *cache = nullptr) {
  if (emb.values.rank() != 3) {
    throw ShapeError("map_audio: embeddings must be L x H x d");
  }
  const std::size_t seg = emb.segments();
  const std::size_t layers = emb.layers();
  if (emb.segment_width() != params.input_dim()) {
    throw ShapeError("map_audio: segment width " +
                     std::to_string(emb.segment_width()) +
                     " != mapper input " + std::to_string(params.input_dim()));
  }
  if (params.output_dim() % layers != 0) {
    throw ShapeError("map_audio: mapper output not divisible by layer count");
  }
  std::vector<double> act(emb.values.values());
  MapperCache local;
  MapperCache &c = cache ? *cache : local;
  c.segments = seg;
  for (std::size_t li = 0; li < 4; ++li) {
    const LinearLayer &layer = params.layers[li];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    std::vector<double> pre(seg * out);
    for (std::size_t s = 0; s < seg; ++s) {
      auto dst = std::span<double>(pre).subspan(s * out, out);
      std::copy(layer.bias.values().begin(), layer.bias.values().end(),
                dst.begin());
      gemv(layer.weight.data(), out, in,
           std::span<const double>(act).subspan(s * in, in), dst, true);
    }
    c.in[li] = std::move(act);
    act = pre;
    if (li < 3) {
      for (double &v : act) {
        v = gelu(v);
      }
    }
    c.pre[li] = std::move(pre);
  }
  return TempoTokens{Tensor({seg, layers, params.output_dim() / layers},
                            std::move(act))};
}

/// Accumulates parameter gradients given dL/dtokens (L x D, row-major).
inline void map_audio_backward(const MapperParams &params,
                               const MapperCache &cache,
                               std::span<const double> d_tokens,
                               MapperParams &grads) {
  const std::size_t seg = cache.segments;
  std::vector<double> delta(d_tokens.begin(), d_tokens.end());
  for (std::size_t li = 4; li-- > 0;) {
    const LinearLayer &layer = params.layers[li];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    LinearLayer &g = grads.layers[li];
    std::vector<double> d_in(seg * in, 0.0);
    for (std::size_t s = 0; s < seg; ++s) {
      auto dy = std::span<const double>(delta).subspan(s * out, out);
      auto x = std::span<const double>(cache.in[li]).subspan(s * in, in);
      outer_acc(g.weight.data(), dy, x);
      for (std::size_t o = 0; o < out; ++o) {
        g.bias[o] += dy[o];
      }
      gemv_t_acc(layer.weight.data(), out, in, dy,
                 std::span<double>(d_in).subspan(s * in, in));
    }
    if (li > 0) {
      // Input of layer li is gelu(pre of layer li-1).
      const auto &pre = cache.pre[li - 1];
      for (std::size_t k = 0; k < d_in.size(); ++k) {
        d_in[k] *= gelu_derivative(pre[k]);
      }
    }
    delta = std::move(d_in);
  }
}

// ---------------------------------------------------------------------------
// Context windows

/// floor(log2 L) + 1 window half-widths j = 1, 2, 4, ..., 2^floor(log2 L).
inline std::size_t resolutions(std::size_t length) {
  if (length == 0) {
    throw DomainError("resolutions: L must be >= 1");
  }
  return static_cast<std::size_t>(std::bit_width(length));
}

/// Inclusive mean over 0-based segments first..last.
inline Token window_average(const TempoTokens &tokens, std::size_t first,
                            std::size_t last) {
  if (first > last || last >= tokens.segments()) {
    throw DomainError("window_average: range [" + std::to_string(first) + ", " +
                      std::to_string(last) + "] outside " +
                      std::to_string(tokens.segments()) + " segments");
  }
  const std::size_t width = tokens.token_width();
  Token out(width, 0.0);
  for (std::size_t s = first; s <= last; ++s) {
    const auto t = tokens.token(s);
    for (std::size_t c = 0; c < width; ++c) {
      out[c] += t[c];
    }
  }
  const double n = static_cast<double>(last - first + 1);
  for (double &v : out) {
    v /= n;
  }
  return out;
}

struct Window {
  std::size_t first;
  std::size_t last;
};

/// Window k of frame i covers [max(0, i - 2^k), min(i + 2^k, L - 1)].
inline std::vector<Window> frame_windows(std::size_t frame,
                                         std::size_t length) {
  std::vector<Window> out;
  const std::size_t count = resolutions(length);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t j = std::size_t{1} << k;
    out.push_back({frame >= j ? frame - j : 0, std::min(frame + j, length - 1)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attentive pooling

struct PoolingResult {
  Token token;
  std::vector<double> distribution;
};

struct PoolingCache {
  std::size_t segments = 0;
  std::vector<double> local_pre;  // L x h_p, V_l a_u
  std::vector<double> cross_left; // L x h_c, unit vectors (zero if guarded)
  std::vector<double> cross_right;
  std::vector<double> left_norm; // L
  std::vector<double> right_norm;
  std::vector<double> right_sum; // h_c
  std::vector<double> theta_local;
  std::vector<double> theta_cross;
  std::vector<double> p;
};

inline constexpr double kCosineGuard = 1e-12;

inline PoolingResult attentive_pool(const TempoTokens &tokens,
                                    const PoolingParams &params,
                                    PoolingCache *cache = nullptr) {
  params.validate();
  const std::size_t seg = tokens.segments();
  const std::size_t width = tokens.token_width();
  if (width != params.token_dim()) {
    throw ShapeError("attentive_pool: token width " + std::to_string(width) +
                     " != pooling input " + std::to_string(params.token_dim()));
  }
  const std::size_t hp = params.local_dim();
  const std::size_t hc = params.cross_dim();
  PoolingCache local;
  PoolingCache &c = cache ? *cache : local;
  c.segments = seg;
  c.local_pre.assign(seg * hp, 0.0);
  c.cross_left.assign(seg * hc, 0.0);
  c.cross_right.assign(seg * hc, 0.0);
  c.left_norm.assign(seg, 0.0);
  c.right_norm.assign(seg, 0.0);
  c.right_sum.assign(hc, 0.0);
  c.theta_local.assign(seg, 0.0);
  c.theta_cross.assign(seg, 0.0);

  auto unit = [&](const Tensor &w, std::size_t u, std::vector<double> &dst,
                  std::vector<double> &norms) {
    auto out = std::span<double>(dst).subspan(u * hc, hc);
    gemv(w.data(), hc, width, tokens.token(u), out);
    const double n = norm2(out);
    norms[u] = n;
    for (double &v : out) {
      v = n < kCosineGuard ? 0.0 : v / n;
    }
  };

  for (std::size_t u = 0; u < seg; ++u) {
    auto pre = std::span<double>(c.local_pre).subspan(u * hp, hp);
    gemv(params.local_hidden.data(), hp, width, tokens.token(u), pre);
    double th = 0.0;
    for (std::size_t k = 0; k < hp; ++k) {
      th += params.local_score[k] * relu(pre[k]);
    }
    c.theta_local[u] = th;
    unit(params.cross_left, u, c.cross_left, c.left_norm);
    unit(params.cross_right, u, c.cross_right, c.right_norm);
    for (std::size_t k = 0; k < hc; ++k) {
      c.right_sum[k] += c.cross_right[u * hc + k];
    }
  }
  std::vector<double> logits(seg);
  for (std::size_t u = 0; u < seg; ++u) {
    c.theta_cross[u] =
        dot(std::span<const double>(c.cross_left).subspan(u * hc, hc),
            c.right_sum);
    logits[u] = params.alpha_local * c.theta_local[u] +
                params.alpha_cross * c.theta_cross[u];
  }
  c.p = softmax(logits);

  PoolingResult out{Token(width, 0.0), c.p};
  for (std::size_t u = 0; u < seg; ++u) {
    const auto t = tokens.token(u);
    for (std::size_t k = 0; k < width; ++k) {
      out.token[k] += c.p[u] * t[k];
    }
  }
  return out;
}

namespace detail {

// d(x/|x|) given dy, for y = x/|x|; zero when the guard zeroed y.
inline void unit_backward(std::span<const double> y, double norm,
                          std::span<const double> dy, std::span<double> dx) {
  if (norm < kCosineGuard) {
    std::fill(dx.begin(), dx.end(), 0.0);
    return;
  }
  const double proj = dot(y, dy);
  for (std::size_t k = 0; k < y.size(); ++k) {
    dx[k] = (dy[k] - y[k] * proj) / norm;
  }
}

} // namespace detail

/// Accumulates gradients wrt the tokens (L x D) and pooling parameters given
/// dL/d(pooled token).
inline void attentive_pool_backward(const TempoTokens &tokens,
                                    const PoolingParams &params,
                                    const PoolingCache &c,
                                    std::span<const double> d_out,
                                    std::span<double> d_tokens,
                                    PoolingParams &grads) {
  const std::size_t seg = c.segments;
  const std::size_t width = tokens.token_width();
  const std::size_t hp = params.local_dim();
  const std::size_t hc = params.cross_dim();

  std::vector<double> dp(seg);
  double mean_dp = 0.0;
  for (std::size_t u = 0; u < seg; ++u) {
    dp[u] = dot(d_out, tokens.token(u));
    mean_dp += c.p[u] * dp[u];
    auto dt = d_tokens.subspan(u * width, width);
    for (std::size_t k = 0; k < width; ++k) {
      dt[k] += c.p[u] * d_out[k];
    }
  }
  std::vector<double> d_logit(seg);
  for (std::size_t u = 0; u < seg; ++u) {
    d_logit[u] = c.p[u] * (dp[u] - mean_dp);
    grads.alpha_local += d_logit[u] * c.theta_local[u];
    grads.alpha_cross += d_logit[u] * c.theta_cross[u];
  }

  // Local potential: theta_l(u) = v_l . relu(V_l a_u)
  std::vector<double> d_pre(hp);
  for (std::size_t u = 0; u < seg; ++u) {
    const double d_theta = params.alpha_local * d_logit[u];
    const auto pre = std::span<const double>(c.local_pre).subspan(u * hp, hp);
    for (std::size_t k = 0; k < hp; ++k) {
      grads.local_score[k] += d_theta * relu(pre[k]);
      d_pre[k] = pre[k] > 0.0 ? d_theta * params.local_score[k] : 0.0;
    }
    outer_acc(grads.local_hidden.data(), d_pre, tokens.token(u));
    gemv_t_acc(params.local_hidden.data(), hp, width, d_pre,
               d_tokens.subspan(u * width, width));
  }

  // Cross potential: theta_c(u) = lhat_u . sum_i rhat_i
  std::vector<double> d_right_sum(hc, 0.0);
  std::vector<double> d_unit(hc), d_raw(hc);
  for (std::size_t u = 0; u < seg; ++u) {
    const double d_theta = params.alpha_cross * d_logit[u];
    const auto lhat = std::span<const double>(c.cross_left).subspan(u * hc, hc);
    for (std::size_t k = 0; k < hc; ++k) {
      d_unit[k] = d_theta * c.right_sum[k];
      d_right_sum[k] += d_theta * lhat[k];
    }
    detail::unit_backward(lhat, c.left_norm[u], d_unit, d_raw);
    outer_acc(grads.cross_left.data(), d_raw, tokens.token(u));
    gemv_t_acc(params.cross_left.data(), hc, width, d_raw,
               d_tokens.subspan(u * width, width));
  }
  for (std::size_t i = 0; i < seg; ++i) {
    const auto rhat = std::span<const double>(c.cross_right).subspan(i * hc, hc);
    detail::unit_backward(rhat, c.right_norm[i], d_right_sum, d_raw);
    outer_acc(grads.cross_right.data(), d_raw, tokens.token(i));
    gemv_t_acc(params.cross_right.data(), hc, width, d_raw,
               d_tokens.subspan(i * width, width));
  }
}

// ---------------------------------------------------------------------------
// Conditioning sequences

/// Per frame: resolutions(L) window averages followed by the shared attentive
/// token.
inline ConditioningSequence build_condition(const TempoTokens &tokens,
                                            const PoolingParams &params,
                                            PoolingCache *cache = nullptr) {
  const std::size_t length = tokens.segments();
  PoolingResult pooled = attentive_pool(tokens, params, cache);
  ConditioningSequence seq;
  seq.frames.resize(length);
  for (std::size_t i = 0; i < length; ++i) {
    for (const Window &w : frame_windows(i, length)) {
      seq.frames[i].push_back(window_average(tokens, w.first, w.last));
    }
    seq.frames[i].push_back(pooled.token);
  }
  seq.attention = std::move(pooled.distribution);
  return seq;
}

/// Backward of build_condition. `d_cond` holds dL/dtoken per frame and slot.
inline void build_condition_backward(const TempoTokens &tokens,
                                     const PoolingParams &params,
                                     const PoolingCache &cache,
                                     const std::vector<std::vector<Token>> &d_cond,
                                     std::span<double> d_tokens,
                                     PoolingParams &grads) {
  const std::size_t length = tokens.segments();
  const std::size_t width = tokens.token_width();
  Token d_atten(width, 0.0);
  for (std::size_t i = 0; i < length; ++i) {
    const auto windows = frame_windows(i, length);
    for (std::size_t k = 0; k < windows.size(); ++k) {
      const Window w = windows[k];
      const double inv = 1.0 / static_cast<double>(w.last - w.first + 1);
      const Token &g = d_cond[i][k];
      for (std::size_t s = w.first; s <= w.last; ++s) {
        auto dt = d_tokens.subspan(s * width, width);
        for (std::size_t c = 0; c < width; ++c) {
          dt[c] += inv * g[c];
        }
      }
    }
    const Token &ga = d_cond[i][windows.size()];
    for (std::size_t c = 0; c < width; ++c) {
      d_atten[c] += ga[c];
    }
  }
  attentive_pool_backward(tokens, params, cache, d_atten, d_tokens, grads);
}

/// One token per frame: the mean of all TempoTokens.
inline ConditioningSequence single_vector_condition(const TempoTokens &tokens) {
  const Token mean = window_average(tokens, 0, tokens.segments() - 1);
  ConditioningSequence seq;
  seq.frames.assign(tokens.segments(), std::vector<Token>{mean});
  return seq;
}

/// (lambda / L) * sum_u ||a_u||_1
inline double regularization(const TempoTokens &tokens, double lambda_l1) {
  if (lambda_l1 < 0.0) {
    throw DomainError("regularization: lambda must be nonnegative");
  }
  if (lambda_l1 == 0.0) {
    return 0.0;
  }
  double acc = 0.0;
  for (double v : tokens.values.values()) {
    acc += std::abs(v);
  }
  return lambda_l1 * acc / static_cast<double>(tokens.segments());
}

inline void regularization_backward(const TempoTokens &tokens,
                                    double lambda_l1, double scale,
                                    std::span<double> d_tokens) {
  const double f = scale * lambda_l1 / static_cast<double>(tokens.segments());
  const auto &v = tokens.values.values();
  for (std::size_t k = 0; k < v.size(); ++k) {
    d_tokens[k] += v[k] > 0.0 ? f : (v[k] < 0.0 ? -f : 0.0);
  }
}

} // namespace tempo
