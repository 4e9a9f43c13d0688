#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace tempo;

namespace {

Grid ramp(std::size_t w, std::size_t h, double slope, double offset) {
  Grid g(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      g.at(x, y) = slope * (static_cast<double>(x) - offset);
    }
  }
  return g;
}

double interior_mean(const Grid &g, std::size_t margin) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t y = margin; y + margin < g.height; ++y) {
    for (std::size_t x = margin; x + margin < g.width; ++x) {
      acc += g.at(x, y);
      ++n;
    }
  }
  return acc / static_cast<double>(n);
}

// Gray square that sits still except for a jump at `jump_frame`.
Video jump_video(std::size_t frames, std::size_t jump_frame) {
  Video v;
  v.width = 32;
  v.height = 32;
  v.fps = {24, 1};
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<std::uint8_t> px(v.frame_bytes(), 20);
    const std::size_t x0 = f < jump_frame ? 6 : 14;
    for (std::size_t y = 10; y < 20; ++y) {
      for (std::size_t x = x0; x < x0 + 10; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          px[(y * v.width + x) * 3 + c] = 220;
        }
      }
    }
    v.frames.push_back(std::move(px));
  }
  return v;
}

} // namespace

TEST(Grayscale, Rec601Weights) {
  const std::vector<std::uint8_t> red{255, 0, 0};
  EXPECT_NEAR(to_grayscale(red, 1, 1).values[0], 0.299, 1e-12);
  const std::vector<std::uint8_t> px{0, 255, 0, 0, 0, 255, 255, 255, 255, 0, 0, 0};
  const Grid g = to_grayscale(px, 2, 2);
  EXPECT_NEAR(g.at(0, 0), 0.587, 1e-12);
  EXPECT_NEAR(g.at(1, 0), 0.114, 1e-12);
  EXPECT_NEAR(g.at(0, 1), 1.0, 1e-12);
  EXPECT_EQ(g.at(1, 1), 0.0);
  EXPECT_THROW(to_grayscale(px, 3, 2), ShapeError);
}

TEST(OpticalFlow, IdenticalFramesZeroFlow) {
  Rng rng(31);
  Grid g(16, 12);
  for (double &v : g.values) {
    v = rng.uniform();
  }
  const FlowField f = optical_flow(g, g);
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    ASSERT_EQ(f.u.values[i], 0.0);
    ASSERT_EQ(f.v.values[i], 0.0);
  }
  EXPECT_EQ(mean_flow_magnitude(f), 0.0);
}

TEST(OpticalFlow, RampShiftedOnePixel) {
  const Grid f1 = ramp(32, 32, 0.01, 0.0);
  const Grid f2 = ramp(32, 32, 0.01, 1.0);
  const FlowField f = optical_flow(f1, f2);
  const double u = interior_mean(f.u, 4);
  EXPECT_GE(u, 0.7);
  EXPECT_LE(u, 1.3);
  EXPECT_NEAR(interior_mean(f.v, 4), 0.0, 1e-9);
}

TEST(OpticalFlow, VerticalRamp) {
  Grid f1(24, 24), f2(24, 24);
  for (std::size_t y = 0; y < 24; ++y) {
    for (std::size_t x = 0; x < 24; ++x) {
      f1.at(x, y) = 0.01 * y;
      f2.at(x, y) = 0.01 * (y + 1.0);
    }
  }
  const FlowField f = optical_flow(f1, f2);
  const double v = interior_mean(f.v, 4);
  EXPECT_LE(v, -0.7);
  EXPECT_GE(v, -1.3);
}

TEST(OpticalFlow, SwappingFramesFlipsSign) {
  Rng rng(32);
  Grid f1(20, 16), f2(20, 16);
  for (std::size_t i = 0; i < f1.values.size(); ++i) {
    f1.values[i] = rng.uniform();
    f2.values[i] = std::clamp(f1.values[i] + 0.05 * rng.normal(), 0.0, 1.0);
  }
  const FlowField a = optical_flow(f1, f2);
  const FlowField b = optical_flow(f2, f1);
  for (std::size_t i = 0; i < f1.values.size(); ++i) {
    EXPECT_NEAR(a.u.values[i], -b.u.values[i], 1e-9);
    EXPECT_NEAR(a.v.values[i], -b.v.values[i], 1e-9);
  }
}

TEST(OpticalFlow, Errors) {
  EXPECT_THROW(optical_flow(Grid(4, 4), Grid(5, 4)), ShapeError);
  EXPECT_THROW(optical_flow(Grid(2, 4), Grid(2, 4)), ShapeError);
  FlowParams p;
  p.alpha = 0.0;
  EXPECT_THROW(optical_flow(Grid(4, 4), Grid(4, 4), p), DomainError);
}

TEST(MotionCurve, StaticVideoIsZero) {
  Video v = jump_video(10, 100);
  for (double c : motion_curve(v)) {
    EXPECT_EQ(c, 0.0);
  }
  EXPECT_TRUE(detect_motion_peaks(motion_curve(v)).empty());
}

TEST(MotionCurve, JumpProducesSinglePeak) {
  const Video v = jump_video(24, 9);
  const auto curve = motion_curve(v);
  ASSERT_EQ(curve.size(), 24u);
  EXPECT_EQ(curve[0], 0.0);
  EXPECT_GT(curve[9], 0.0);
  EXPECT_EQ(detect_motion_peaks(curve), PeakSet({9}));
  EXPECT_EQ(detect_motion_peaks(curve, {}, MotionPeakMode::derivative), PeakSet({9}));
}

TEST(MotionCurve, NeedsTwoFrames) {
  EXPECT_THROW(motion_curve(jump_video(1, 0)), DomainError);
}

TEST(MotionPeaks, SpikeCurve) {
  std::vector<double> c(20, 0.0);
  c[7] = 3.0;
  EXPECT_EQ(detect_motion_peaks(c), PeakSet({7}));
}

TEST(MotionPeaks, ConstantOffsetInvariance) {
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> c(40);
    for (double &x : c) {
      x = rng.uniform() * (rng.uniform() < 0.15 ? 5.0 : 0.5);
    }
    const PeakSet base = detect_motion_peaks(c);
    for (double &x : c) {
      x += 2.5;
    }
    EXPECT_EQ(detect_motion_peaks(c), base);
  }
}

TEST(MotionPeaks, SynthEventsRecovered) {
  SynthConfig cfg;
  cfg.seed = 5;
  const SynthClip clip = generate_synth(cfg);
  const PeakSet peaks = detect_motion_peaks(motion_curve(clip.video));
  ASSERT_EQ(peaks.size(), clip.video_events.size());
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    EXPECT_LE(std::abs(static_cast<long>(peaks[i]) -
                       static_cast<long>(clip.video_events[i])),
              1);
  }
}
