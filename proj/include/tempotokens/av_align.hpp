#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tempotokens/audio_analysis.hpp"
#include "tempotokens/errors.hpp"
#include "tempotokens/motion_analysis.hpp"
#include "tempotokens/peaks.hpp"

namespace tempo {

struct AlignReport {
  double score = 0.0;
  std::size_t matched_audio = 0;
  std::size_t matched_video = 0;
  std::size_t tolerance = 1;
  std::size_t audio_peaks = 0;
  std::size_t video_peaks = 0;
  std::size_t union_size = 0;
  bool vacuous = false;
  // Filled by av_align_from_media only.
  std::size_t frames = 0;
  PeakSet audio;
  PeakSet video;
  std::vector<std::string> warnings;
};

/// Peaks of each set matched by the other within +-tolerance, normalised by
/// twice the exact-index union. Two empty sets score 1 and are flagged
/// vacuous.
inline AlignReport av_align_score(const PeakSet &audio, const PeakSet &video,
                                  std::size_t tolerance = 1) {
  AlignReport r;
  r.tolerance = tolerance;
  r.audio_peaks = audio.size();
  r.video_peaks = video.size();
  for (std::size_t a : audio) {
    r.matched_audio += video.has_within(a, tolerance) ? 1 : 0;
  }
  for (std::size_t v : video) {
    r.matched_video += audio.has_within(v, tolerance) ? 1 : 0;
  }
  std::vector<std::size_t> uni;
  std::set_union(audio.begin(), audio.end(), video.begin(), video.end(),
                 std::back_inserter(uni));
  r.union_size = uni.size();
  if (r.union_size == 0) {
    r.vacuous = true;
    r.score = 1.0;
  } else {
    r.score = static_cast<double>(r.matched_audio + r.matched_video) /
              (2.0 * static_cast<double>(r.union_size));
  }
  return r;
}

struct AlignOptions {
  OnsetParams onset{};
  FlowParams flow{};
  PeakParams motion_peaks{};
  MotionPeakMode motion_mode = MotionPeakMode::curve;
  std::size_t tolerance = 1;
  // Clips whose shorter stream covers less than this fraction of the longer
  // one are rejected instead of truncated.
  double min_overlap = 0.5;
};

/// Audio onsets vs. motion peaks on a decoded clip. Streams that differ by
/// more than one frame are truncated to the shorter one (with a warning).
inline AlignReport av_align_from_media(const Video &video,
                                       const AudioSignal &audio,
                                       const AlignOptions &opts = {}) {
  video.validate();
  const double fps = video.fps.value();
  const double vdur = video.duration();
  const double adur = audio.duration();
  std::vector<std::string> warnings;
  std::size_t frames = video.frames.size();
  if (std::abs(vdur - adur) > 1.0 / fps) {
    if (std::min(vdur, adur) < opts.min_overlap * std::max(vdur, adur)) {
      std::ostringstream msg;
      msg << "audio (" << adur << " s) and video (" << vdur
          << " s) durations differ beyond the truncation policy";
      throw DurationMismatchError(msg.str());
    }
    std::ostringstream msg;
    msg << "duration mismatch: audio " << adur << " s, video " << vdur
        << " s; truncated to the shorter stream";
    warnings.push_back(msg.str());
    frames = std::min(frames, static_cast<std::size_t>(std::floor(adur * fps)));
  }
  if (frames < 2) {
    throw DomainError("av_align: need at least two overlapping frames");
  }

  Video clip = video;
  clip.frames.resize(frames);
  AudioSignal sound = audio;
  const auto samples = static_cast<std::size_t>(
      std::llround(static_cast<double>(frames) / fps * audio.sample_rate));
  if (sound.samples.size() > samples) {
    sound.samples.resize(samples);
  }

  const PeakSet audio_peaks = detect_onsets(sound, video.fps, opts.onset, frames);
  const auto curve = motion_curve(clip, opts.flow);
  const PeakSet video_peaks =
      detect_motion_peaks(curve, opts.motion_peaks, opts.motion_mode);

  AlignReport r = av_align_score(audio_peaks, video_peaks, opts.tolerance);
  r.frames = frames;
  r.audio = audio_peaks;
  r.video = video_peaks;
  r.warnings = std::move(warnings);
  return r;
}

// ---------------------------------------------------------------------------
// Serialisation

/// One key=value pair per line.
inline std::string to_key_value(const AlignReport &r) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "score=" << r.score << "\n";
  out << "vacuous=" << (r.vacuous ? "true" : "false") << "\n";
  out << "tolerance=" << r.tolerance << "\n";
  out << "matched_audio=" << r.matched_audio << "\n";
  out << "matched_video=" << r.matched_video << "\n";
  out << "audio_peaks=" << r.audio_peaks << "\n";
  out << "video_peaks=" << r.video_peaks << "\n";
  out << "union=" << r.union_size << "\n";
  return out.str();
}

/// Schema (all keys always present):
///   score: number in [0,1], vacuous: bool, tolerance: int,
///   matched_audio, matched_video, audio_peaks, video_peaks, union: int,
///   frames: int, audio: [int], video: [int], warnings: [string]
inline nlohmann::json to_json(const AlignReport &r) {
  return nlohmann::json{
      {"score", r.score},
      {"vacuous", r.vacuous},
      {"tolerance", r.tolerance},
      {"matched_audio", r.matched_audio},
      {"matched_video", r.matched_video},
      {"audio_peaks", r.audio_peaks},
      {"video_peaks", r.video_peaks},
      {"union", r.union_size},
      {"frames", r.frames},
      {"audio", r.audio.indices()},
      {"video", r.video.indices()},
      {"warnings", r.warnings},
  };
}

/// Returns an empty string when `doc` matches the report schema, otherwise a
/// description of the first violation.
inline std::string check_report_schema(const nlohmann::json &doc) {
  if (!doc.is_object()) {
    return "report is not an object";
  }
  const char *ints[] = {"tolerance",   "matched_audio", "matched_video",
                        "audio_peaks", "video_peaks",   "union",
                        "frames"};
  for (const char *k : ints) {
    if (!doc.contains(k) || !doc[k].is_number_unsigned()) {
      return std::string("missing or non-integer key ") + k;
    }
  }
  if (!doc.contains("score") || !doc["score"].is_number()) {
    return "missing numeric score";
  }
  const double s = doc["score"].get<double>();
  if (s < 0.0 || s > 1.0) {
    return "score outside [0,1]";
  }
  if (!doc.contains("vacuous") || !doc["vacuous"].is_boolean()) {
    return "missing boolean vacuous";
  }
  for (const char *k : {"audio", "video"}) {
    if (!doc.contains(k) || !doc[k].is_array()) {
      return std::string("missing array ") + k;
    }
    for (const auto &e : doc[k]) {
      if (!e.is_number_unsigned()) {
        return std::string("non-integer entry in ") + k;
      }
    }
  }
  if (!doc.contains("warnings") || !doc["warnings"].is_array()) {
    return "missing array warnings";
  }
  return {};
}

} // namespace tempo
