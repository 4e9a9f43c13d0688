#include <gtest/gtest.h>

#include "test_support.hpp"

#include <fstream>

using namespace tempo;
using testing_support::TempDir;

namespace {

std::vector<std::uint8_t> pcm_wav(std::uint16_t channels, std::uint32_t rate,
                                  const std::vector<std::int16_t> &samples) {
  binary::Writer w;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  w.bytes("RIFF");
  w.u32(36 + data_bytes);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(channels);
  w.u32(rate);
  w.u32(rate * channels * 2);
  w.u16(static_cast<std::uint16_t>(channels * 2));
  w.u16(16);
  w.bytes("data");
  w.u32(data_bytes);
  for (auto s : samples) {
    w.i16(s);
  }
  return w.buffer();
}

} // namespace

TEST(Wav, SilenceDecodesToZeros) {
  const auto sig = decode_wav(pcm_wav(1, 16000, std::vector<std::int16_t>(16000, 0)));
  EXPECT_EQ(sig.sample_rate, 16000u);
  ASSERT_EQ(sig.samples.size(), 16000u);
  for (double s : sig.samples) {
    ASSERT_EQ(s, 0.0);
  }
}

TEST(Wav, FullScaleSample) {
  const auto sig = decode_wav(pcm_wav(1, 8000, {32767, -32768}));
  EXPECT_EQ(sig.samples[0], 0.999969482421875);
  EXPECT_EQ(sig.samples[1], -1.0);
}

TEST(Wav, StereoAveraged) {
  const auto sig = decode_wav(pcm_wav(2, 8000, {32767, -32768}));
  ASSERT_EQ(sig.samples.size(), 1u);
  EXPECT_EQ(sig.samples[0], -1.52587890625e-05);
}

TEST(Wav, RejectsNonPcmAndTruncation) {
  auto bytes = pcm_wav(1, 8000, {1, 2, 3});
  auto bad_format = bytes;
  bad_format[20] = 3; // IEEE float
  EXPECT_THROW(decode_wav(bad_format), FormatError);
  auto bad_bits = bytes;
  bad_bits[34] = 24;
  EXPECT_THROW(decode_wav(bad_bits), FormatError);
  bytes.resize(10);
  EXPECT_THROW(decode_wav(bytes), FormatError);
  EXPECT_THROW(decode_wav(std::vector<std::uint8_t>{'R', 'I', 'F', 'X'}), FormatError);
}

TEST(Wav, SkipsUnknownChunks) {
  auto bytes = pcm_wav(1, 8000, {100});
  binary::Writer extra;
  extra.bytes("LIST");
  extra.u32(3);
  extra.bytes("abc");
  extra.bytes(std::string(1, '\0')); // pad byte
  bytes.insert(bytes.begin() + 12, extra.buffer().begin(), extra.buffer().end());
  const auto sig = decode_wav(bytes);
  ASSERT_EQ(sig.samples.size(), 1u);
  EXPECT_EQ(sig.samples[0], 100.0 / 32768.0);
}

TEST(Wav, EncodeDecodeRoundTrip) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    AudioSignal sig;
    sig.sample_rate = 8000 + static_cast<std::uint32_t>(rng.below(40000));
    for (std::size_t i = 0; i < 1 + rng.below(500); ++i) {
      sig.samples.push_back(static_cast<double>(static_cast<std::int64_t>(rng.below(65536)) - 32768) / 32768.0);
    }
    const auto back = decode_wav(encode_wav(sig));
    EXPECT_EQ(back.sample_rate, sig.sample_rate);
    EXPECT_EQ(back.samples, sig.samples);
  }
}

TEST(Wav, OutputAlwaysInUnitRange) {
  Rng rng(12);
  std::vector<std::int16_t> raw(4000);
  for (auto &s : raw) {
    s = static_cast<std::int16_t>(static_cast<std::int64_t>(rng.below(65536)) - 32768);
  }
  for (std::uint16_t ch : {1, 2}) {
    for (double s : decode_wav(pcm_wav(ch, 16000, raw)).samples) {
      ASSERT_GE(s, -1.0);
      ASSERT_LE(s, 1.0);
    }
  }
}

TEST(Wav, EncodeClampsOutOfRange) {
  AudioSignal sig{{2.0, -3.0}, 8000};
  const auto back = decode_wav(encode_wav(sig));
  EXPECT_EQ(back.samples[0], 32767.0 / 32768.0);
  EXPECT_EQ(back.samples[1], -1.0);
}

TEST(Rvid, SinglePixelRoundTrip) {
  Video v;
  v.width = 1;
  v.height = 1;
  v.fps = {24, 1};
  v.frames = {{10, 20, 30}};
  const auto bytes = encode_video(v);
  EXPECT_EQ(bytes.size(), 4u + 5 * 4 + 3);
  EXPECT_EQ(decode_video(bytes), v);
  EXPECT_EQ(encode_video(decode_video(bytes)), bytes);
}

TEST(Rvid, SyntheticClipRoundTrip) {
  SynthConfig cfg;
  cfg.seed = 3;
  const Video v = generate_synth(cfg).video;
  ASSERT_EQ(v.frames.size(), 96u);
  EXPECT_EQ(decode_video(encode_video(v)), v);
}

TEST(Rvid, HeaderFields) {
  Video v;
  v.width = 2;
  v.height = 3;
  v.fps = {30000, 1001};
  v.frames.assign(4, std::vector<std::uint8_t>(18, 7));
  const auto b = encode_video(v);
  binary::Reader r(b, "test");
  r.expect_magic("RVID");
  EXPECT_EQ(r.u32(), 2u);
  EXPECT_EQ(r.u32(), 3u);
  EXPECT_EQ(r.u32(), 4u);
  EXPECT_EQ(r.u32(), 30000u);
  EXPECT_EQ(r.u32(), 1001u);
  EXPECT_EQ(r.remaining(), 4u * 18u);
}

TEST(Rvid, TruncatedPayloadRejected) {
  Video v;
  v.width = 4;
  v.height = 4;
  v.fps = {24, 1};
  v.frames.assign(10, std::vector<std::uint8_t>(48, 1));
  auto bytes = encode_video(v);
  bytes.resize(bytes.size() - 48); // 9 frames of payload
  EXPECT_THROW(decode_video(bytes), FormatError);
  auto extra = encode_video(v);
  extra.push_back(0);
  EXPECT_THROW(decode_video(extra), FormatError);
}

TEST(Rvid, RandomRoundTrips) {
  Rng rng(13);
  for (int i = 0; i < 30; ++i) {
    const Video v = testing_support::random_video(rng, 9, 5);
    EXPECT_EQ(decode_video(encode_video(v)), v);
  }
}

TEST(Rvid, FileAndPpmDirectory) {
  TempDir dir;
  Rng rng(14);
  Video v = testing_support::random_video(rng, 6, 4);
  write_video(v, dir / "a.rvid");
  EXPECT_EQ(read_video(dir / "a.rvid"), v);
  write_video_ppm_directory(v, dir / "frames");
  EXPECT_EQ(read_video(dir / "frames"), v);
}

TEST(Rvid, MissingFileIsFormatError) {
  EXPECT_THROW(read_video("/nonexistent/clip.rvid"), Error);
}

TEST(Rational, Parse) {
  EXPECT_EQ(Rational::parse("24"), (Rational{24, 1}));
  EXPECT_EQ(Rational::parse("30000/1001"), (Rational{30000, 1001}));
  EXPECT_EQ(Rational::parse("23.976"), (Rational{23976, 1000}));
  EXPECT_THROW(Rational::parse("abc"), DomainError);
  EXPECT_THROW(Rational::parse("0"), DomainError);
  EXPECT_THROW(Rational::parse("1/0"), DomainError);
}

TEST(Tte1, MinimalLayout) {
  AudioEmbeddings emb{Tensor({1, 1, 1})};
  const auto bytes = encode_embeddings(emb);
  EXPECT_EQ(bytes.size(), 16u + 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TTE1");
}

TEST(Tte1, LargeRandomRoundTrip) {
  Rng rng(15);
  AudioEmbeddings emb{testing_support::random_f32_tensor(rng, {24, 12, 768})};
  const auto bytes = encode_embeddings(emb);
  EXPECT_EQ(bytes.size(), 16u + 4u * 24 * 12 * 768);
  EXPECT_EQ(decode_embeddings(bytes).values, emb.values);
  EXPECT_EQ(encode_embeddings(decode_embeddings(bytes)), bytes);
}

TEST(Tte1, PayloadLengthMismatchRejected) {
  AudioEmbeddings emb{Tensor({2, 2, 2})};
  auto bytes = encode_embeddings(emb);
  bytes.pop_back();
  EXPECT_THROW(decode_embeddings(bytes), FormatError);
  auto longer = encode_embeddings(emb);
  longer.insert(longer.end(), 4, 0);
  EXPECT_THROW(decode_embeddings(longer), FormatError);
}

TEST(Tte1, NonFiniteRejected) {
  AudioEmbeddings emb{Tensor({1, 1, 2})};
  auto bytes = encode_embeddings(emb);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 16, &nan, 4);
  EXPECT_THROW(decode_embeddings(bytes), ValidationError);
  emb.values[0] = 1e300; // overflows binary32
  EXPECT_THROW(encode_embeddings(emb), ValidationError);
}

TEST(Tte1, FileRoundTrip) {
  TempDir dir;
  Rng rng(16);
  AudioEmbeddings emb{testing_support::random_f32_tensor(rng, {3, 2, 5})};
  write_embeddings(emb, dir / "e.tte");
  EXPECT_EQ(read_embeddings(dir / "e.tte").values, emb.values);
}

namespace {

TempoTokens random_tokens(Rng &rng, std::size_t length, std::size_t layers,
                          std::size_t dim) {
  return TempoTokens{testing_support::random_f32_tensor(rng, {length, layers, dim}, 1.0)};
}

ConditioningSequence f32_condition(ConditioningSequence c) {
  for (auto &f : c.frames) {
    for (auto &t : f) {
      for (double &v : t) {
        v = static_cast<float>(v);
      }
    }
  }
  return c;
}

} // namespace

TEST(Ttc1, TwentyFourFramesDeclareSixTokens) {
  Rng rng(17);
  const TempoTokens tokens = random_tokens(rng, 24, 2, 4);
  const auto pool = PoolingParams::init(8, 4, 4, rng);
  const auto bytes = encode_condition(build_condition(tokens, pool));
  binary::Reader r(bytes, "test");
  r.expect_magic("TTC1");
  EXPECT_EQ(r.u32(), 24u);
  EXPECT_EQ(r.u32(), 6u);
  EXPECT_EQ(r.u32(), 8u);
}

TEST(Ttc1, SingleFrameDeclaresTwoTokens) {
  Rng rng(18);
  const TempoTokens tokens = random_tokens(rng, 1, 1, 3);
  const auto pool = PoolingParams::init(3, 2, 2, rng);
  const auto file = decode_condition(encode_condition(build_condition(tokens, pool)));
  EXPECT_EQ(file.frames, 1u);
  EXPECT_EQ(file.tokens_per_frame, 2u);
}

TEST(Ttc1, RoundTripEquality) {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t length = 1 + rng.below(30);
    const TempoTokens tokens = random_tokens(rng, length, 1 + rng.below(3), 1 + rng.below(4));
    const auto pool = PoolingParams::init(tokens.token_width(), 3, 3, rng);
    const ConditioningSequence cond = f32_condition(build_condition(tokens, pool));
    const auto bytes = encode_condition(cond);
    const ConditioningSequence back = to_sequence(decode_condition(bytes));
    EXPECT_EQ(back.frames, cond.frames);
    EXPECT_EQ(encode_condition(back), bytes);
  }
}

TEST(Ttc1, RaggedSequenceRejected) {
  ConditioningSequence cond;
  cond.frames = {{{1.0, 2.0}}, {{1.0, 2.0}, {3.0, 4.0}}};
  EXPECT_THROW(encode_condition(cond), ValidationError);
  cond.frames = {{{1.0, 2.0}}, {{1.0}}};
  EXPECT_THROW(encode_condition(cond), ValidationError);
}

TEST(Ttc1, FileRoundTrip) {
  TempDir dir;
  ConditioningSequence cond;
  cond.frames = {{{0.5, -1.0}}, {{2.0, 3.0}}};
  write_condition(cond, dir / "c.ttc");
  EXPECT_EQ(to_sequence(read_condition(dir / "c.ttc")).frames, cond.frames);
}
