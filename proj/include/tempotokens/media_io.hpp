#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tempotokens/binary.hpp"
#include "tempotokens/conditioning.hpp"
#include "tempotokens/errors.hpp"
#include "tempotokens/numerics.hpp"

namespace tempo {

// ---------------------------------------------------------------------------
// Domain types

struct AudioSignal {
  std::vector<double> samples;
  std::uint32_t sample_rate = 16000;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct Rational {
  std::uint32_t num = 24;
  std::uint32_t den = 1;

  double value() const { return static_cast<double>(num) / den; }
  friend bool operator==(const Rational &, const Rational &) = default;

  /// Parses "24", "30000/1001" or "23.976" style strings.
  static Rational parse(const std::string &text) {
    const auto slash = text.find('/');
    try {
      if (slash != std::string::npos) {
        const unsigned long n = std::stoul(text.substr(0, slash));
        const unsigned long d = std::stoul(text.substr(slash + 1));
        if (n == 0 || d == 0) {
          throw DomainError("rate must be positive: " + text);
        }
        return {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(d)};
      }
      const double v = std::stod(text);
      if (!(v > 0.0)) {
        throw DomainError("rate must be positive: " + text);
      }
      if (v == std::floor(v)) {
        return {static_cast<std::uint32_t>(v), 1};
      }
      return {static_cast<std::uint32_t>(std::lround(v * 1000.0)), 1000};
    } catch (const std::logic_error &) {
      throw DomainError("cannot parse rate: " + text);
    }
  }
};

/// 8-bit RGB frames, row-major, top-left origin.
struct Video {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  Rational fps;
  std::vector<std::vector<std::uint8_t>> frames;

  std::size_t frame_bytes() const {
    return static_cast<std::size_t>(width) * height * 3;
  }
  std::size_t frame_count() const { return frames.size(); }
  double duration() const { return frames.size() / fps.value(); }

  void validate() const {
    if (width == 0 || height == 0) {
      throw ValidationError("video dimensions must be positive");
    }
    if (fps.num == 0 || fps.den == 0) {
      throw ValidationError("video fps must be positive");
    }
    if (frames.empty()) {
      throw ValidationError("video has no frames");
    }
    for (const auto &f : frames) {
      if (f.size() != frame_bytes()) {
        throw ValidationError("video frame size mismatch");
      }
    }
  }

  friend bool operator==(const Video &, const Video &) = default;
};

/// Encoder activations, L segments x H_layers x d channels.
struct AudioEmbeddings {
  Tensor values;

  std::size_t segments() const { return values.dim(0); }
  std::size_t layers() const { return values.dim(1); }
  std::size_t dim() const { return values.dim(2); }
  /// Width of one flattened segment, H_layers * d.
  std::size_t segment_width() const { return layers() * dim(); }
};

/// Decoded TTC1 payload. `token_dim` is the flattened width of one slot.
struct ConditionFile {
  std::size_t frames = 0;
  std::size_t tokens_per_frame = 0;
  std::size_t token_dim = 0;
  Tensor values;
};

// ---------------------------------------------------------------------------
// WAV (RIFF/WAVE, PCM 16-bit)

inline AudioSignal decode_wav(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "wav");
  r.expect_magic("RIFF");
  r.u32();
  r.expect_magic("WAVE");

  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  while (r.remaining() >= 8) {
    auto id = r.take(4);
    const std::uint32_t size = r.u32();
    const std::string chunk(reinterpret_cast<const char *>(id.data()), 4);
    if (chunk == "fmt ") {
      if (size < 16) {
        throw FormatError("wav: fmt chunk too small");
      }
      auto body = r.take(size);
      binary::Reader f(body, "wav fmt");
      const std::uint16_t format = f.u16();
      channels = f.u16();
      rate = f.u32();
      f.u32(); // byte rate
      f.u16(); // block align
      bits = f.u16();
      if (format != 1) {
        throw FormatError("wav: unsupported codec " + std::to_string(format) +
                          " (only PCM is supported)");
      }
      if (bits != 16) {
        throw FormatError("wav: unsupported bit depth " +
                          std::to_string(bits));
      }
      if (channels != 1 && channels != 2) {
        throw FormatError("wav: unsupported channel count " +
                          std::to_string(channels));
      }
      if (rate == 0) {
        throw FormatError("wav: zero sample rate");
      }
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) {
        throw FormatError("wav: data chunk before fmt chunk");
      }
      auto body = r.take(size);
      const std::size_t frame_bytes = 2u * channels;
      const std::size_t n = body.size() / frame_bytes;
      if (n == 0) {
        throw FormatError("wav: no samples");
      }
      binary::Reader d(body, "wav data");
      AudioSignal sig;
      sig.sample_rate = rate;
      sig.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (channels == 1) {
          sig.samples[i] = d.i16() / 32768.0;
        } else {
          const double left = d.i16();
          const double right = d.i16();
          sig.samples[i] = 0.5 * (left + right) / 32768.0;
        }
      }
      return sig;
    } else {
      r.skip(size);
    }
    if (size % 2 == 1 && r.remaining() > 0) {
      r.skip(1);
    }
  }
  throw FormatError(have_fmt ? "wav: missing data chunk"
                             : "wav: missing fmt chunk");
}

/// Mono 16-bit PCM; samples are scaled by 32768 and clamped.
inline std::vector<std::uint8_t> encode_wav(const AudioSignal &sig) {
  binary::Writer w;
  const auto data_bytes = binary::to_u32(sig.samples.size() * 2, "wav data");
  w.bytes("RIFF");
  w.u32(36 + data_bytes);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(sig.sample_rate);
  w.u32(sig.sample_rate * 2);
  w.u16(2);
  w.u16(16);
  w.bytes("data");
  w.u32(data_bytes);
  for (double s : sig.samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    w.i16(static_cast<std::int16_t>(q));
  }
  return std::move(w.buffer());
}

inline AudioSignal read_wav(const std::filesystem::path &path) {
  const auto bytes = binary::read_file(path);
  return decode_wav(bytes);
}

inline void write_wav(const AudioSignal &sig,
                      const std::filesystem::path &path) {
  binary::write_file(path, encode_wav(sig));
}

// ---------------------------------------------------------------------------
// RVID container

inline std::vector<std::uint8_t> encode_video(const Video &video) {
  video.validate();
  binary::Writer w;
  w.bytes("RVID");
  w.u32(video.width);
  w.u32(video.height);
  w.u32(binary::to_u32(video.frames.size(), "frame count"));
  w.u32(video.fps.num);
  w.u32(video.fps.den);
  for (const auto &f : video.frames) {
    w.bytes(f);
  }
  return std::move(w.buffer());
}

inline Video decode_video(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "rvid");
  r.expect_magic("RVID");
  Video v;
  v.width = r.u32();
  v.height = r.u32();
  const std::uint32_t count = r.u32();
  v.fps.num = r.u32();
  v.fps.den = r.u32();
  if (v.width == 0 || v.height == 0 || count == 0 || v.fps.num == 0 ||
      v.fps.den == 0) {
    throw FormatError("rvid: zero dimension, frame count or fps");
  }
  const std::size_t fb = v.frame_bytes();
  r.need(fb * count);
  v.frames.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto s = r.take(fb);
    v.frames.emplace_back(s.begin(), s.end());
  }
  if (r.remaining() != 0) {
    throw FormatError("rvid: trailing bytes after last frame");
  }
  return v;
}

namespace detail {

inline std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu.ppm", i);
  return buf;
}

inline Video read_ppm_directory(const std::filesystem::path &dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) {
    throw FormatError("ppm directory without manifest.txt: " + dir.string());
  }
  std::size_t count = 0;
  Rational fps{0, 0};
  std::string line;
  while (std::getline(manifest, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      continue;
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "frames") {
        count = std::stoul(value);
      } else if (key == "fps") {
        fps = Rational::parse(value);
      }
    } catch (const Error &) {
      throw FormatError("ppm manifest: bad value for " + key);
    } catch (const std::logic_error &) {
      throw FormatError("ppm manifest: bad value for " + key);
    }
  }
  if (count == 0 || fps.num == 0) {
    throw FormatError("ppm manifest: missing frames or fps");
  }
  Video v;
  v.fps = fps;
  for (std::size_t i = 0; i < count; ++i) {
    const auto bytes = binary::read_file(dir / frame_name(i));
    // P6 header: magic, width, height, maxval, each whitespace separated.
    std::size_t pos = 0;
    auto token = [&]() {
      while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
          while (pos < bytes.size() && bytes[pos] != '\n') {
            ++pos;
          }
        } else if (std::isspace(bytes[pos])) {
          ++pos;
        } else {
          break;
        }
      }
      std::string t;
      while (pos < bytes.size() && !std::isspace(bytes[pos])) {
        t.push_back(static_cast<char>(bytes[pos++]));
      }
      return t;
    };
    if (token() != "P6") {
      throw FormatError("ppm: expected binary P6 frame " + frame_name(i));
    }
    std::uint32_t w = 0;
    std::uint32_t h = 0;
    std::uint32_t maxval = 0;
    try {
      w = static_cast<std::uint32_t>(std::stoul(token()));
      h = static_cast<std::uint32_t>(std::stoul(token()));
      maxval = static_cast<std::uint32_t>(std::stoul(token()));
    } catch (const std::logic_error &) {
      throw FormatError("ppm: malformed header in " + frame_name(i));
    }
    if (maxval != 255) {
      throw FormatError("ppm: only 8-bit frames are supported");
    }
    ++pos; // single whitespace before raster
    if (i == 0) {
      v.width = w;
      v.height = h;
    } else if (w != v.width || h != v.height) {
      throw FormatError("ppm: frame dimensions differ");
    }
    const std::size_t fb = v.frame_bytes();
    if (bytes.size() < pos + fb) {
      throw FormatError("ppm: truncated raster in " + frame_name(i));
    }
    v.frames.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                          bytes.begin() + static_cast<std::ptrdiff_t>(pos + fb));
  }
  return v;
}

} // namespace detail

/// Reads an RVID file, or a directory of P6 frames with a manifest.txt.
inline Video read_video(const std::filesystem::path &path) {
  if (std::filesystem::is_directory(path)) {
    return detail::read_ppm_directory(path);
  }
  return decode_video(binary::read_file(path));
}

inline void write_video(const Video &video, const std::filesystem::path &path) {
  binary::write_file(path, encode_video(video));
}

/// Writes frame_NNNNN.ppm files plus manifest.txt (keys: frames, fps).
inline void write_video_ppm_directory(const Video &video,
                                      const std::filesystem::path &dir) {
  video.validate();
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < video.frames.size(); ++i) {
    binary::Writer w;
    w.bytes("P6\n" + std::to_string(video.width) + " " +
            std::to_string(video.height) + "\n255\n");
    w.bytes(video.frames[i]);
    binary::write_file(dir / detail::frame_name(i), w.buffer());
  }
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  manifest << "frames=" << video.frames.size() << "\n"
           << "fps=" << video.fps.num << "/" << video.fps.den << "\n";
}

// ---------------------------------------------------------------------------
// TTE1 embeddings and shared rank-3 float payloads

namespace detail {

inline void write_rank3(binary::Writer &w, std::string_view magic,
                        const Tensor &t) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(magic) + ": expected a rank-3 tensor");
  }
  w.bytes(magic);
  for (std::size_t d : t.shape()) {
    w.u32(binary::to_u32(d, "tensor dimension"));
  }
  for (double v : t.values()) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) {
      throw ValidationError(std::string(magic) +
                            ": value not representable as finite binary32");
    }
    w.f32(f);
  }
}

inline Tensor read_rank3(binary::Reader &r, std::string_view magic) {
  r.expect_magic(magic);
  const std::size_t a = r.u32();
  const std::size_t b = r.u32();
  const std::size_t c = r.u32();
  if (a == 0 || b == 0 || c == 0) {
    throw FormatError(std::string(magic) + ": zero dimension");
  }
  const std::size_t n = a * b * c;
  r.need(4 * n);
  std::vector<double> values(n);
  for (double &v : values) {
    v = r.f32();
    if (!std::isfinite(v)) {
      throw ValidationError(std::string(magic) + ": non-finite value");
    }
  }
  return Tensor({a, b, c}, std::move(values));
}

} // namespace detail

inline std::vector<std::uint8_t> encode_embeddings(const AudioEmbeddings &emb) {
  binary::Writer w;
  detail::write_rank3(w, "TTE1", emb.values);
  return std::move(w.buffer());
}

inline AudioEmbeddings decode_embeddings(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "tte1");
  AudioEmbeddings emb{detail::read_rank3(r, "TTE1")};
  if (r.remaining() != 0) {
    throw FormatError("tte1: payload length does not match header");
  }
  return emb;
}

inline AudioEmbeddings read_embeddings(const std::filesystem::path &path) {
  return decode_embeddings(binary::read_file(path));
}

inline void write_embeddings(const AudioEmbeddings &emb,
                             const std::filesystem::path &path) {
  binary::write_file(path, encode_embeddings(emb));
}

// ---------------------------------------------------------------------------
// TTC1 conditions

inline std::vector<std::uint8_t>
encode_condition(const ConditioningSequence &cond) {
  cond.validate();
  const std::size_t frames = cond.frame_count();
  const std::size_t per_frame = cond.frames.front().size();
  const std::size_t width = cond.frames.front().front().size();
  Tensor t({frames, per_frame, width});
  std::size_t k = 0;
  for (const auto &frame : cond.frames) {
    for (const Token &tok : frame) {
      for (double v : tok) {
        t[k++] = v;
      }
    }
  }
  binary::Writer w;
  detail::write_rank3(w, "TTC1", t);
  return std::move(w.buffer());
}

inline ConditionFile decode_condition(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "ttc1");
  ConditionFile f;
  f.values = detail::read_rank3(r, "TTC1");
  if (r.remaining() != 0) {
    throw FormatError("ttc1: payload length does not match header");
  }
  f.frames = f.values.dim(0);
  f.tokens_per_frame = f.values.dim(1);
  f.token_dim = f.values.dim(2);
  return f;
}

/// Rebuilds per-frame token lists from a decoded file.
inline ConditioningSequence to_sequence(const ConditionFile &file) {
  ConditioningSequence seq;
  seq.frames.resize(file.frames);
  for (std::size_t i = 0; i < file.frames; ++i) {
    seq.frames[i].resize(file.tokens_per_frame);
    for (std::size_t j = 0; j < file.tokens_per_frame; ++j) {
      auto &tok = seq.frames[i][j];
      tok.resize(file.token_dim);
      for (std::size_t c = 0; c < file.token_dim; ++c) {
        tok[c] = file.values.at(i, j, c);
      }
    }
  }
  return seq;
}

inline void write_condition(const ConditioningSequence &cond,
                            const std::filesystem::path &path) {
  binary::write_file(path, encode_condition(cond));
}

inline ConditionFile read_condition(const std::filesystem::path &path) {
  return decode_condition(binary::read_file(path));
}

} // namespace tempo
