#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <mutex>
#include <numbers>
#include <optional>
#include <vector>

#include <fftw3.h>

#include "tempotokens/errors.hpp"
#include "tempotokens/media_io.hpp"
#include "tempotokens/numerics.hpp"
#include "tempotokens/peaks.hpp"

namespace tempo {

/// Magnitude STFT, frames x bins row-major.
struct Spectrogram {
  std::vector<double> magnitudes;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t hop = 0;
  std::size_t win = 0;
  std::uint32_t sample_rate = 0;

  double at(std::size_t t, std::size_t b) const {
    return magnitudes[t * bins + b];
  }
  std::span<const double> column(std::size_t t) const {
    return std::span<const double>(magnitudes).subspan(t * bins, bins);
  }
};

struct OnsetParams {
  std::size_t win = 1024;
  std::size_t hop = 0; // 0: round(sample_rate / fps), one column per frame
  PeakParams peaks{};

  std::size_t resolve_hop(std::uint32_t sample_rate, Rational fps) const {
    if (hop != 0) {
      return hop;
    }
    const double h = std::round(sample_rate / fps.value());
    return std::max<std::size_t>(1, static_cast<std::size_t>(h));
  }
};

namespace detail {

// fftw planning is not thread safe; execution with the new-array interface is.
inline std::mutex &fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
public:
  explicit RealFft(std::size_t n)
      : n_(n), in_(fftw_alloc_real(n)), out_(fftw_alloc_complex(n / 2 + 1)) {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_,
                                 FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft &) = delete;
  RealFft &operator=(const RealFft &) = delete;

  double *input() { return in_; }

  /// Runs the transform and writes |X_k| for k in [0, n/2].
  void magnitudes(std::span<double> out) {
    fftw_execute(plan_);
    for (std::size_t k = 0; k <= n_ / 2; ++k) {
      out[k] = std::hypot(out_[k][0], out_[k][1]);
    }
  }

private:
  std::size_t n_;
  double *in_;
  fftw_complex *out_;
  fftw_plan plan_{};
};

} // namespace detail

/// Periodic Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / N).
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

inline Spectrogram stft_magnitude(const AudioSignal &signal, std::size_t win,
                                  std::size_t hop) {
  if (win < 2 || hop == 0) {
    throw DomainError("stft: window must be >= 2 and hop >= 1");
  }
  if (signal.samples.size() < win) {
    throw DomainError("stft: signal shorter than the window");
  }
  Spectrogram spec;
  spec.win = win;
  spec.hop = hop;
  spec.sample_rate = signal.sample_rate;
  spec.bins = win / 2 + 1;
  spec.frames = (signal.samples.size() - win) / hop + 1;
  spec.magnitudes.assign(spec.frames * spec.bins, 0.0);

  const auto window = hann_window(win);
  detail::RealFft fft(win);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const double *src = signal.samples.data() + t * hop;
    double *in = fft.input();
    for (std::size_t i = 0; i < win; ++i) {
      in[i] = src[i] * window[i];
    }
    fft.magnitudes(
        std::span<double>(spec.magnitudes).subspan(t * spec.bins, spec.bins));
  }
  return spec;
}

/// Half-wave rectified frame-to-frame magnitude increase; flux[0] = 0.
inline std::vector<double> spectral_flux(const Spectrogram &spec) {
  std::vector<double> flux(spec.frames, 0.0);
  for (std::size_t t = 1; t < spec.frames; ++t) {
    double acc = 0.0;
    for (std::size_t b = 0; b < spec.bins; ++b) {
      acc += std::max(0.0, spec.at(t, b) - spec.at(t - 1, b));
    }
    flux[t] = acc;
  }
  return flux;
}

/// Spectral-flux curve at the onset hop. The signal is zero-padded by half a
/// window on both sides so column t is centred on sample t * hop.
inline std::vector<double> onset_strength(const AudioSignal &signal,
                                          Rational fps,
                                          const OnsetParams &params = {}) {
  const std::size_t hop = params.resolve_hop(signal.sample_rate, fps);
  const std::size_t pad = params.win / 2;
  AudioSignal centred;
  centred.sample_rate = signal.sample_rate;
  centred.samples.assign(signal.samples.size() + 2 * pad, 0.0);
  std::copy(signal.samples.begin(), signal.samples.end(),
            centred.samples.begin() + static_cast<std::ptrdiff_t>(pad));
  return spectral_flux(stft_magnitude(centred, params.win, hop));
}

/// Audio onsets as video-frame indices. When `frame_count` is given, indices
/// are clipped to [0, frame_count - 1].
inline PeakSet detect_onsets(const AudioSignal &signal, Rational fps,
                             const OnsetParams &params = {},
                             std::optional<std::size_t> frame_count = {}) {
  if (fps.num == 0 || fps.den == 0) {
    throw DomainError("detect_onsets: fps must be positive");
  }
  if (params.win < params.resolve_hop(signal.sample_rate, fps)) {
    throw DomainError("detect_onsets: window shorter than hop");
  }
  const auto flux = onset_strength(signal, fps, params);
  const std::size_t hop = params.resolve_hop(signal.sample_rate, fps);
  std::vector<std::size_t> frames;
  for (std::size_t t : pick_peaks(flux, params.peaks)) {
    const double f = std::round(static_cast<double>(t) * hop * fps.value() /
                                signal.sample_rate);
    std::size_t idx = static_cast<std::size_t>(std::max(0.0, f));
    if (frame_count) {
      if (*frame_count == 0) {
        continue;
      }
      idx = std::min(idx, *frame_count - 1);
    }
    frames.push_back(idx);
  }
  return PeakSet::from_unsorted(std::move(frames));
}

// ---------------------------------------------------------------------------
// Stand-in encoder

struct ToyEncoderParams {
  std::size_t win = 1024;
  std::size_t hop = 256;
  double log_floor = -10.0; // log10 energy floor
};

namespace detail {

inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Triangular filters on the mel scale; every filter keeps at least a
/// one-bin half-width so narrow bands still see their nearest bins.
inline std::vector<std::vector<double>>
mel_filterbank(std::size_t bands, std::size_t bins, double sample_rate) {
  const double nyquist = sample_rate / 2.0;
  const double mel_hi = hz_to_mel(nyquist);
  std::vector<double> centers(bands + 2);
  for (std::size_t i = 0; i < bands + 2; ++i) {
    const double hz = mel_to_hz(mel_hi * i / (bands + 1));
    centers[i] = hz / nyquist * (bins - 1);
  }
  std::vector<std::vector<double>> bank(bands, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < bands; ++m) {
    const double left = std::max(centers[m + 1] - centers[m], 1.0);
    const double right = std::max(centers[m + 2] - centers[m + 1], 1.0);
    for (std::size_t b = 0; b < bins; ++b) {
      const double x = static_cast<double>(b) - centers[m + 1];
      const double w = x < 0 ? 1.0 + x / left : 1.0 - x / right;
      bank[m][b] = std::max(0.0, w);
    }
  }
  return bank;
}

} // namespace detail

/// Deterministic stand-in for a pretrained audio encoder: log10 mel-band
/// energies per STFT column, average-pooled into `segments` equal spans and
/// spread over `layers` by a per-layer gain around the log floor.
inline AudioEmbeddings toy_audio_features(const AudioSignal &signal,
                                          std::size_t segments,
                                          std::size_t layers, std::size_t dim,
                                          const ToyEncoderParams &params = {}) {
  if (segments == 0 || layers == 0 || dim == 0) {
    throw DomainError("toy_audio_features: L, layers and dim must be >= 1");
  }
  AudioSignal padded = signal;
  if (padded.samples.size() < params.win) {
    padded.samples.resize(params.win, 0.0);
  }
  const Spectrogram spec = stft_magnitude(padded, params.win, params.hop);
  const auto bank = detail::mel_filterbank(dim, spec.bins, spec.sample_rate);

  std::vector<double> column_features(spec.frames * dim);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const auto col = spec.column(t);
    for (std::size_t m = 0; m < dim; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < spec.bins; ++b) {
        e += bank[m][b] * col[b] * col[b];
      }
      column_features[t * dim + m] =
          std::max(params.log_floor, std::log10(std::max(e, 1e-300)));
    }
  }

  Tensor out({segments, layers, dim});
  const std::size_t cols = spec.frames;
  for (std::size_t s = 0; s < segments; ++s) {
    std::size_t a = s * cols / segments;
    std::size_t b = std::max((s + 1) * cols / segments, a + 1);
    a = std::min(a, cols - 1);
    b = std::min(b, cols);
    for (std::size_t m = 0; m < dim; ++m) {
      double acc = 0.0;
      for (std::size_t t = a; t < b; ++t) {
        acc += column_features[t * dim + m];
      }
      const double pooled = acc / static_cast<double>(b - a);
      for (std::size_t h = 0; h < layers; ++h) {
        const double gain = 1.0 + 0.125 * static_cast<double>(h);
        out.at(s, h, m) = params.log_floor + gain * (pooled - params.log_floor);
      }
    }
  }
  return AudioEmbeddings{std::move(out)};
}

} // namespace tempo
