#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace tempo;
using testing_support::brute_force_align;
using testing_support::random_peaks;

TEST(AvAlignScore, ExactMatch) {
  const auto r = av_align_score({10, 22}, {10, 22}, 1);
  EXPECT_EQ(r.score, 1.0);
  EXPECT_FALSE(r.vacuous);
}

TEST(AvAlignScore, WithinTolerance) {
  // Both matched, union {10, 11}: 2 / 4.
  const auto r = av_align_score({10}, {11}, 1);
  EXPECT_EQ(r.matched_audio, 1u);
  EXPECT_EQ(r.matched_video, 1u);
  EXPECT_EQ(r.union_size, 2u);
  EXPECT_EQ(r.score, 0.5);
}

TEST(AvAlignScore, DisjointAndEmpty) {
  EXPECT_EQ(av_align_score({10}, {20}, 1).score, 0.0);
  EXPECT_EQ(av_align_score({}, {3, 4}, 1).score, 0.0);
  EXPECT_EQ(av_align_score({5}, {}, 1).score, 0.0);
  const auto r = av_align_score({}, {}, 1);
  EXPECT_EQ(r.score, 1.0);
  EXPECT_TRUE(r.vacuous);
}

TEST(AvAlignScore, HandComputed) {
  // A={1,5,9}, V={2,9,20}, tol 1: matched a {1,9}, v {2,9}; union size 5.
  const auto r = av_align_score({1, 5, 9}, {2, 9, 20}, 1);
  EXPECT_EQ(r.matched_audio, 2u);
  EXPECT_EQ(r.matched_video, 2u);
  EXPECT_EQ(r.union_size, 5u);
  EXPECT_DOUBLE_EQ(r.score, 0.4);
  EXPECT_EQ(av_align_score({1, 5, 9}, {2, 9, 20}, 0).score, 0.2);
}

TEST(AvAlignScore, MatchesBruteForce) {
  Rng rng(41);
  for (int trial = 0; trial < 2000; ++trial) {
    const PeakSet a = random_peaks(rng, 20, 100);
    const PeakSet v = random_peaks(rng, 20, 100);
    const std::size_t tol = std::array<std::size_t, 3>{0, 1, 3}[rng.below(3)];
    ASSERT_EQ(av_align_score(a, v, tol).score,
              brute_force_align(a.indices(), v.indices(), tol));
  }
}

TEST(AvAlignScore, SymmetricAndBounded) {
  Rng rng(42);
  for (int trial = 0; trial < 500; ++trial) {
    const PeakSet a = random_peaks(rng, 15, 60);
    const PeakSet v = random_peaks(rng, 15, 60);
    const double s = av_align_score(a, v, 1).score;
    EXPECT_EQ(s, av_align_score(v, a, 1).score);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    if (!a.empty()) {
      EXPECT_EQ(av_align_score(a, a, 0).score, 1.0);
    }
  }
}

TEST(AvAlignScore, MonotoneInTolerance) {
  Rng rng(43);
  for (int trial = 0; trial < 500; ++trial) {
    const PeakSet a = random_peaks(rng, 15, 60);
    const PeakSet v = random_peaks(rng, 15, 60);
    double prev = -1.0;
    for (std::size_t tol = 0; tol <= 5; ++tol) {
      const double s = av_align_score(a, v, tol).score;
      EXPECT_GE(s, prev);
      prev = s;
    }
  }
}

TEST(AvAlignScore, ShiftInvariant) {
  Rng rng(44);
  for (int trial = 0; trial < 200; ++trial) {
    const PeakSet a = random_peaks(rng, 10, 50);
    const PeakSet v = random_peaks(rng, 10, 50);
    const std::size_t k = rng.below(30);
    EXPECT_EQ(av_align_score(a, v, 1).score,
              av_align_score(a.shifted(k), v.shifted(k), 1).score);
  }
}

TEST(AvAlignMedia, StaticVideoSilenceIsVacuous) {
  Video v;
  v.width = 8;
  v.height = 8;
  v.fps = {24, 1};
  v.frames.assign(48, std::vector<std::uint8_t>(v.frame_bytes(), 77));
  const AudioSignal a{std::vector<double>(32000, 0.0), 16000};
  const auto r = av_align_from_media(v, a);
  EXPECT_TRUE(r.vacuous);
  EXPECT_EQ(r.score, 1.0);
  EXPECT_EQ(r.frames, 48u);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(AvAlignMedia, SynchronisedSynthScoresOne) {
  SynthConfig cfg;
  cfg.seed = 3;
  const SynthClip clip = generate_synth(cfg);
  const auto r = av_align_from_media(clip.video, clip.audio);
  EXPECT_EQ(r.score, 1.0);
  EXPECT_EQ(r.audio.size(), cfg.n_events);
  EXPECT_EQ(r.video.size(), cfg.n_events);
}

TEST(AvAlignMedia, ShiftedSynthScoresLow) {
  SynthConfig cfg;
  cfg.seed = 3;
  cfg.shift_frames = 12;
  const SynthClip clip = generate_synth(cfg);
  EXPECT_LE(av_align_from_media(clip.video, clip.audio).score, 0.2);
}

TEST(AvAlignMedia, DurationPolicy) {
  SynthConfig cfg;
  cfg.seed = 4;
  const SynthClip clip = generate_synth(cfg);
  AudioSignal shorter = clip.audio;
  shorter.samples.resize(shorter.samples.size() * 3 / 4);
  const auto r = av_align_from_media(clip.video, shorter);
  EXPECT_EQ(r.frames, 72u);
  ASSERT_EQ(r.warnings.size(), 1u);
  AudioSignal tiny = clip.audio;
  tiny.samples.resize(tiny.samples.size() / 3);
  EXPECT_THROW(av_align_from_media(clip.video, tiny), DurationMismatchError);
}

TEST(AvAlignReport, JsonSchema) {
  SynthConfig cfg;
  cfg.seed = 6;
  const SynthClip clip = generate_synth(cfg);
  const auto j = to_json(av_align_from_media(clip.video, clip.audio));
  EXPECT_EQ(check_report_schema(j), "");
  const auto round = nlohmann::json::parse(j.dump());
  EXPECT_EQ(check_report_schema(round), "");
  auto broken = j;
  broken.erase("union");
  EXPECT_NE(check_report_schema(broken), "");
  broken = j;
  broken["score"] = 1.5;
  EXPECT_NE(check_report_schema(broken), "");
  broken = j;
  broken["audio"] = nlohmann::json::array({-1});
  EXPECT_NE(check_report_schema(broken), "");
  EXPECT_NE(check_report_schema(nlohmann::json::array()), "");
}

TEST(AvAlignReport, KeyValue) {
  const std::string s = to_key_value(av_align_score({1, 5, 9}, {2, 9, 20}, 1));
  EXPECT_NE(s.find("score=0.400000\n"), std::string::npos);
  EXPECT_NE(s.find("union=5\n"), std::string::npos);
  EXPECT_NE(s.find("vacuous=false\n"), std::string::npos);
}
