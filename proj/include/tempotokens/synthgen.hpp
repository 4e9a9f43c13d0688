#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <numbers>
#include <string>
#include <vector>

#include "tempotokens/errors.hpp"
#include "tempotokens/media_io.hpp"
#include "tempotokens/numerics.hpp"

namespace tempo {

enum class EventKind { bounce, flash };

inline EventKind parse_event_kind(const std::string &s) {
  if (s == "bounce") {
    return EventKind::bounce;
  }
  if (s == "flash") {
    return EventKind::flash;
  }
  throw DomainError("unknown event kind: " + s);
}

struct SynthConfig {
  std::uint32_t width = 64;
  std::uint32_t height = 64;
  Rational fps{24, 1};
  double duration = 4.0;
  std::uint32_t sample_rate = 16000;
  std::size_t n_events = 6;
  EventKind kind = EventKind::bounce;
  std::size_t shift_frames = 0;
  std::uint64_t seed = 0;

  std::size_t frame_count() const {
    return static_cast<std::size_t>(std::llround(duration * fps.value()));
  }
  std::size_t min_spacing() const {
    return static_cast<std::size_t>(std::ceil(0.25 * fps.value()));
  }
};

struct SynthClip {
  Video video;
  AudioSignal audio;
  std::vector<std::size_t> video_events;
  // Audio event frames (video events + shift); events pushed past the end of
  // the clip are dropped.
  std::vector<std::size_t> audio_events;
};

namespace detail {

// Events live in [margin, frames - margin) with at least `gap` frames between
// neighbours: sorted offsets in the slack range plus k * gap.
inline std::vector<std::size_t> place_events(const SynthConfig &cfg, Rng &rng) {
  const std::size_t frames = cfg.frame_count();
  const std::size_t gap = cfg.min_spacing();
  const std::size_t margin = 4;
  if (cfg.n_events == 0) {
    return {};
  }
  const std::size_t needed = margin * 2 + (cfg.n_events - 1) * gap + 1;
  if (frames < needed) {
    throw ValidationError("synth: " + std::to_string(cfg.n_events) +
                          " events with " + std::to_string(gap) +
                          "-frame spacing do not fit in " +
                          std::to_string(frames) + " frames");
  }
  const std::size_t slack = frames - needed;
  std::vector<std::size_t> offsets(cfg.n_events);
  for (auto &o : offsets) {
    o = rng.below(slack + 1);
  }
  std::sort(offsets.begin(), offsets.end());
  std::vector<std::size_t> events(cfg.n_events);
  for (std::size_t k = 0; k < cfg.n_events; ++k) {
    events[k] = margin + offsets[k] + k * gap;
  }
  return events;
}

struct Rgb {
  double r, g, b;
};

// Soft-edged disk coverage in [0, 1].
inline double disk_coverage(double px, double py, double cx, double cy,
                            double radius) {
  const double d = std::hypot(px - cx, py - cy);
  return 1.0 / (1.0 + std::exp((d - radius) / 0.8));
}

inline std::vector<std::uint8_t> render(const SynthConfig &cfg, double cx,
                                        double cy, double radius, Rgb ball,
                                        double brightness, Rgb bg) {
  std::vector<std::uint8_t> frame(static_cast<std::size_t>(cfg.width) *
                                  cfg.height * 3);
  for (std::uint32_t y = 0; y < cfg.height; ++y) {
    for (std::uint32_t x = 0; x < cfg.width; ++x) {
      const double c = disk_coverage(x, y, cx, cy, radius) * brightness;
      const std::size_t k = (static_cast<std::size_t>(y) * cfg.width + x) * 3;
      auto mix = [&](double b, double f) {
        return static_cast<std::uint8_t>(
            std::clamp(std::lround(255.0 * (b * (1.0 - c) + f * c)), 0L, 255L));
      };
      frame[k] = mix(bg.r, ball.r);
      frame[k + 1] = mix(bg.g, ball.g);
      frame[k + 2] = mix(bg.b, ball.b);
    }
  }
  return frame;
}

// 2 kHz decaying sinusoid, 30 ms, peak 0.5 (-6 dBFS), 0.5 ms raised-cosine
// attack.
inline void add_click(std::vector<double> &samples, std::size_t start,
                      std::uint32_t sample_rate) {
  const auto length = static_cast<std::size_t>(0.030 * sample_rate);
  const double attack = 0.0005 * sample_rate;
  const double tau = 0.006 * sample_rate;
  for (std::size_t i = 0; i < length && start + i < samples.size(); ++i) {
    const double n = static_cast<double>(i);
    double env = std::exp(-n / tau);
    if (n < attack) {
      env *= 0.5 - 0.5 * std::cos(std::numbers::pi * n / attack);
    }
    samples[start + i] +=
        0.5 * env * std::sin(2.0 * std::numbers::pi * 2000.0 * n / sample_rate);
  }
}

} // namespace detail

/// Deterministic clip with known event frames. Bounce: the ball rests high,
/// drops to the floor in a single frame at each event and climbs back along
/// a decelerating arc. Flash: a disk brightens at each event and decays.
inline SynthClip generate_synth(const SynthConfig &cfg) {
  if (cfg.width < 8 || cfg.height < 8 || cfg.fps.num == 0 ||
      cfg.fps.den == 0 || !(cfg.duration > 0.0) || cfg.sample_rate == 0) {
    throw ValidationError("synth: invalid dimensions, rate or duration");
  }
  Rng rng(cfg.seed);
  SynthClip clip;
  clip.video_events = detail::place_events(cfg, rng);
  const std::size_t frames = cfg.frame_count();
  for (std::size_t e : clip.video_events) {
    if (e + cfg.shift_frames < frames) {
      clip.audio_events.push_back(e + cfg.shift_frames);
    }
  }

  const double w = cfg.width;
  const double h = cfg.height;
  const double radius = std::max(2.0, std::min(w, h) / 10.0);
  const detail::Rgb bg{0.08, 0.08, 0.12};
  const detail::Rgb ball{rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0),
                         rng.uniform(0.6, 1.0)};
  const double cx = rng.uniform(radius + 2.0, w - radius - 2.0);

  clip.video.width = cfg.width;
  clip.video.height = cfg.height;
  clip.video.fps = cfg.fps;
  clip.video.frames.reserve(frames);

  if (cfg.kind == EventKind::bounce) {
    const double floor_y = h - radius - 3.0;
    const double lift = std::min(h * 0.18, floor_y - radius - 2.0);
    const auto &ev = clip.video_events;
    for (std::size_t f = 0; f < frames; ++f) {
      double height_above = lift;
      // Most recent event at or before f, and the next one after it.
      auto next = std::upper_bound(ev.begin(), ev.end(), f);
      if (next != ev.begin()) {
        const std::size_t last = *(next - 1);
        const double span = next != ev.end()
                                ? static_cast<double>(*next - last)
                                : static_cast<double>(cfg.min_spacing()) * 2.0;
        const double tau = std::min(1.0, (f - last) / span);
        height_above = lift * (1.0 - (1.0 - tau) * (1.0 - tau));
      }
      clip.video.frames.push_back(detail::render(
          cfg, cx, floor_y - height_above, radius, ball, 1.0, bg));
    }
  } else {
    const double cy = rng.uniform(radius + 2.0, h - radius - 2.0);
    for (std::size_t f = 0; f < frames; ++f) {
      double glow = 0.0;
      for (std::size_t e : clip.video_events) {
        if (f >= e) {
          glow = std::max(glow, std::pow(0.35, static_cast<double>(f - e)));
        }
      }
      clip.video.frames.push_back(
          detail::render(cfg, cx, cy, radius, ball, 0.25 + 0.75 * glow, bg));
    }
  }

  const auto samples = static_cast<std::size_t>(
      std::llround(frames / cfg.fps.value() * cfg.sample_rate));
  clip.audio.sample_rate = cfg.sample_rate;
  clip.audio.samples.resize(samples);
  for (double &s : clip.audio.samples) {
    s = 3e-4 * rng.normal();
  }
  for (std::size_t e : clip.audio_events) {
    const auto start = static_cast<std::size_t>(
        std::llround(e / cfg.fps.value() * cfg.sample_rate));
    detail::add_click(clip.audio.samples, start, cfg.sample_rate);
  }
  for (double &s : clip.audio.samples) {
    s = std::clamp(s, -1.0, 1.0);
  }
  return clip;
}

struct CorpusEntry {
  std::filesystem::path video;
  std::filesystem::path audio;
  std::filesystem::path truth;
};

inline void write_truth(const std::vector<std::size_t> &events,
                        const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  for (std::size_t e : events) {
    out << e << "\n";
  }
}

inline std::vector<std::size_t> read_truth(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("cannot open " + path.string());
  }
  std::vector<std::size_t> events;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    try {
      events.push_back(std::stoul(line));
    } catch (const std::logic_error &) {
      throw FormatError("bad ground-truth line in " + path.string());
    }
  }
  return events;
}

/// Clip i uses seed cfg.seed + i. Writes clip_NNN.{rvid,wav,truth.txt} and
/// manifest.txt (one "video audio truth" line per clip, relative paths).
inline std::vector<CorpusEntry> write_corpus(const SynthConfig &cfg,
                                             std::size_t n_clips,
                                             const std::filesystem::path &dir) {
  if (n_clips == 0) {
    throw DomainError("corpus needs at least one clip");
  }
  std::filesystem::create_directories(dir);
  std::vector<CorpusEntry> entries;
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  for (std::size_t i = 0; i < n_clips; ++i) {
    SynthConfig c = cfg;
    c.seed = cfg.seed + i;
    const SynthClip clip = generate_synth(c);
    char stem[32];
    std::snprintf(stem, sizeof stem, "clip_%03zu", i);
    CorpusEntry e{std::string(stem) + ".rvid", std::string(stem) + ".wav",
                  std::string(stem) + ".truth.txt"};
    write_video(clip.video, dir / e.video);
    write_wav(clip.audio, dir / e.audio);
    write_truth(clip.video_events, dir / e.truth);
    write_truth(clip.audio_events,
                dir / (std::string(stem) + ".audio_truth.txt"));
    manifest << e.video.string() << " " << e.audio.string() << " "
             << e.truth.string() << "\n";
    entries.push_back(e);
  }
  if (!manifest) {
    throw Error("failed writing manifest in " + dir.string());
  }
  return entries;
}

/// Entries with paths resolved against the manifest's directory.
inline std::vector<CorpusEntry>
read_manifest(const std::filesystem::path &manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw FormatError("cannot open manifest " + manifest_path.string());
  }
  const auto base = manifest_path.parent_path();
  std::vector<CorpusEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream fields(line);
    std::string v, a, t;
    if (!(fields >> v >> a)) {
      throw FormatError("malformed manifest line: " + line);
    }
    fields >> t;
    entries.push_back({base / v, base / a, t.empty() ? std::filesystem::path{}
                                                     : base / t});
  }
  if (entries.empty()) {
    throw FormatError("empty manifest " + manifest_path.string());
  }
  return entries;
}

} // namespace tempo
