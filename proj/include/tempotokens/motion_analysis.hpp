#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "tempotokens/errors.hpp"
#include "tempotokens/media_io.hpp"
#include "tempotokens/peaks.hpp"

namespace tempo {

/// Row-major real image.
struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), values(w * h, fill) {}

  double &at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  double at(std::size_t x, std::size_t y) const {
    return values[y * width + x];
  }
};

struct FlowField {
  Grid u;
  Grid v;
};

struct FlowParams {
  // Smoothness weight in 8-bit intensity units: gray levels are scaled by
  // 255 before iterating.
  double alpha = 10.0;
  std::size_t iterations = 100;

  void validate() const {
    if (!(alpha > 0.0)) {
      throw DomainError("flow alpha must be positive");
    }
    if (iterations == 0) {
      throw DomainError("flow iterations must be >= 1");
    }
  }
};

enum class MotionPeakMode {
  curve,     // peak-pick the mean flow magnitude itself
  derivative // peak-pick its positive first difference
};

/// Rec.601 luma in [0, 1].
inline Grid to_grayscale(std::span<const std::uint8_t> rgb, std::size_t width,
                         std::size_t height) {
  if (rgb.size() != width * height * 3) {
    throw ShapeError("to_grayscale: frame size does not match dimensions");
  }
  Grid g(width, height);
  for (std::size_t i = 0; i < width * height; ++i) {
    g.values[i] = (0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] +
                   0.114 * rgb[3 * i + 2]) /
                  255.0;
  }
  return g;
}

namespace detail {

// Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
inline std::vector<std::size_t> reflect_table(std::size_t n, int offset) {
  std::vector<std::size_t> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    long j = static_cast<long>(i) + offset;
    if (j < 0) {
      j = -j;
    }
    if (j >= static_cast<long>(n)) {
      j = 2 * static_cast<long>(n) - 2 - j;
    }
    t[i] = static_cast<std::size_t>(j);
  }
  return t;
}

} // namespace detail

/// Horn-Schunck flow from f1 to f2.
inline FlowField optical_flow(const Grid &f1, const Grid &f2,
                              const FlowParams &params = {}) {
  params.validate();
  if (f1.width != f2.width || f1.height != f2.height) {
    throw ShapeError("optical_flow: frame dimensions differ");
  }
  const std::size_t w = f1.width;
  const std::size_t h = f1.height;
  if (w < 3 || h < 3) {
    throw ShapeError("optical_flow: frames must be at least 3x3");
  }
  const auto xm = detail::reflect_table(w, -1);
  const auto xp = detail::reflect_table(w, +1);
  const auto ym = detail::reflect_table(h, -1);
  const auto yp = detail::reflect_table(h, +1);

  constexpr double scale = 255.0;
  const std::size_t n = w * h;
  std::vector<double> ix(n), iy(n), it(n), denom(n);
  const double alpha2 = params.alpha * params.alpha;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      auto avg = [&](std::size_t xx, std::size_t yy) {
        return 0.5 * scale * (f1.at(xx, yy) + f2.at(xx, yy));
      };
      const std::size_t k = y * w + x;
      ix[k] = 0.5 * (avg(xp[x], y) - avg(xm[x], y));
      iy[k] = 0.5 * (avg(x, yp[y]) - avg(x, ym[y]));
      it[k] = scale * (f2.at(x, y) - f1.at(x, y));
      denom[k] = alpha2 + ix[k] * ix[k] + iy[k] * iy[k];
    }
  }

  FlowField flow{Grid(w, h), Grid(w, h)};
  std::vector<double> u(n, 0.0), v(n, 0.0), un(n), vn(n);
  for (std::size_t iter = 0; iter < params.iterations; ++iter) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t r = y * w;
      const std::size_t rm = ym[y] * w;
      const std::size_t rp = yp[y] * w;
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t a = xm[x];
        const std::size_t b = xp[x];
        // Horn-Schunck neighbourhood average: 1/6 edges, 1/12 corners.
        const double ubar = (u[r + a] + u[r + b] + u[rm + x] + u[rp + x]) / 6.0 +
                            (u[rm + a] + u[rm + b] + u[rp + a] + u[rp + b]) / 12.0;
        const double vbar = (v[r + a] + v[r + b] + v[rm + x] + v[rp + x]) / 6.0 +
                            (v[rm + a] + v[rm + b] + v[rp + a] + v[rp + b]) / 12.0;
        const std::size_t k = r + x;
        const double t = (ix[k] * ubar + iy[k] * vbar + it[k]) / denom[k];
        un[k] = ubar - ix[k] * t;
        vn[k] = vbar - iy[k] * t;
      }
    }
    u.swap(un);
    v.swap(vn);
  }
  flow.u.values = std::move(u);
  flow.v.values = std::move(v);
  return flow;
}

inline double mean_flow_magnitude(const FlowField &flow) {
  double acc = 0.0;
  for (std::size_t i = 0; i < flow.u.values.size(); ++i) {
    acc += std::hypot(flow.u.values[i], flow.v.values[i]);
  }
  return acc / static_cast<double>(flow.u.values.size());
}

/// curve[i] is the mean flow magnitude from frame i-1 to frame i; curve[0] = 0.
inline std::vector<double> motion_curve(const Video &video,
                                        const FlowParams &params = {}) {
  video.validate();
  if (video.frames.size() < 2) {
    throw DomainError("motion_curve: need at least two frames");
  }
  std::vector<double> curve(video.frames.size(), 0.0);
  Grid prev = to_grayscale(video.frames[0], video.width, video.height);
  for (std::size_t i = 1; i < video.frames.size(); ++i) {
    Grid cur = to_grayscale(video.frames[i], video.width, video.height);
    curve[i] = mean_flow_magnitude(optical_flow(prev, cur, params));
    prev = std::move(cur);
  }
  return curve;
}

inline PeakSet detect_motion_peaks(std::span<const double> curve,
                                   const PeakParams &params = {},
                                   MotionPeakMode mode = MotionPeakMode::curve) {
  if (mode == MotionPeakMode::derivative) {
    std::vector<double> diff(curve.size(), 0.0);
    for (std::size_t i = 1; i < curve.size(); ++i) {
      diff[i] = std::max(0.0, curve[i] - curve[i - 1]);
    }
    return PeakSet(pick_peaks(diff, params));
  }
  return PeakSet(pick_peaks(curve, params));
}

} // namespace tempo
