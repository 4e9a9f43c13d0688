#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace tempo;

namespace {

TempoTokens make_tokens(std::size_t segments, std::size_t layers,
                        std::size_t dim, Rng &rng) {
  return TempoTokens{rng.normal_tensor({segments, layers, dim})};
}

TempoTokens scalar_tokens(const std::vector<double> &values) {
  return TempoTokens{Tensor({values.size(), 1, 1}, values)};
}

// Straightforward pooling distribution used as an oracle.
std::vector<double> pooling_oracle(const TempoTokens &tokens, const PoolingParams &p) {
  const std::size_t L = tokens.segments();
  const std::size_t D = tokens.token_width();
  auto matvec = [&](const Tensor &w, std::span<const double> x) {
    std::vector<double> y(w.dim(0), 0.0);
    for (std::size_t r = 0; r < w.dim(0); ++r) {
      for (std::size_t c = 0; c < D; ++c) {
        y[r] += w.at(r, c) * x[c];
      }
    }
    return y;
  };
  auto cosine = [](const std::vector<double> &a, const std::vector<double> &b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      ab += a[k] * b[k];
      aa += a[k] * a[k];
      bb += b[k] * b[k];
    }
    return ab / std::sqrt(aa * bb);
  };
  std::vector<double> logits(L);
  for (std::size_t u = 0; u < L; ++u) {
    const auto h = matvec(p.local_hidden, tokens.token(u));
    double local = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
      local += p.local_score[k] * std::max(0.0, h[k]);
    }
    double cross = 0.0;
    const auto left = matvec(p.cross_left, tokens.token(u));
    for (std::size_t i = 0; i < L; ++i) {
      cross += cosine(left, matvec(p.cross_right, tokens.token(i)));
    }
    logits[u] = p.alpha_local * local + p.alpha_cross * cross;
  }
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double &l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  for (double &l : logits) {
    l /= z;
  }
  return logits;
}

std::vector<double> flatten(MapperParams &m) {
  std::vector<double> out;
  m.for_each([&](const std::string &, std::span<double> s) {
    out.insert(out.end(), s.begin(), s.end());
  });
  return out;
}

void assign(MapperParams &m, std::span<const double> flat) {
  std::size_t at = 0;
  m.for_each([&](const std::string &, std::span<double> s) {
    std::copy(flat.begin() + at, flat.begin() + at + s.size(), s.begin());
    at += s.size();
  });
}

std::vector<double> flatten(PoolingParams &p) {
  std::vector<double> out;
  p.for_each([&](const std::string &, std::span<double> s) {
    out.insert(out.end(), s.begin(), s.end());
  });
  return out;
}

void assign(PoolingParams &p, std::span<const double> flat) {
  std::size_t at = 0;
  p.for_each([&](const std::string &, std::span<double> s) {
    std::copy(flat.begin() + at, flat.begin() + at + s.size(), s.begin());
    at += s.size();
  });
}

} // namespace

TEST(Mapper, ZeroParametersGiveZeroTokens) {
  Rng rng(51);
  MapperParams p = MapperParams::init(8, {6, 6, 6}, 4, rng);
  p = MapperParams::zeros_like(p);
  const auto t = map_audio(AudioEmbeddings{rng.normal_tensor({5, 2, 4})}, p);
  EXPECT_EQ(t.values.shape(), (std::vector<std::size_t>{5, 2, 2}));
  for (double v : t.values.values()) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(Mapper, MatchesLayerComposition) {
  Rng rng(52);
  const MapperParams p = MapperParams::init(6, {7, 5, 9}, 4, rng);
  const AudioEmbeddings emb{rng.normal_tensor({3, 2, 3})};
  const auto tokens = map_audio(emb, p);
  Tensor x({3, 6}, emb.values.values());
  for (std::size_t i = 0; i < 4; ++i) {
    x = linear_forward(x, p.layers[i]);
    if (i < 3) {
      x = gelu(x);
    }
  }
  ASSERT_EQ(x.size(), tokens.values.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    EXPECT_NEAR(tokens.values[k], x[k], 1e-12);
  }
}

TEST(Mapper, SegmentsIndependent) {
  Rng rng(53);
  const MapperParams p = MapperParams::init(4, {5, 5, 5}, 4, rng);
  AudioEmbeddings emb{rng.normal_tensor({4, 1, 4})};
  const auto base = map_audio(emb, p);
  emb.values.at(2, 0, 1) += 1.0;
  const auto changed = map_audio(emb, p);
  for (std::size_t s = 0; s < 4; ++s) {
    const bool same = std::equal(base.token(s).begin(), base.token(s).end(),
                                 changed.token(s).begin());
    EXPECT_EQ(same, s != 2);
  }
}

TEST(Mapper, SegmentPermutationEquivariant) {
  Rng rng(65);
  const MapperParams p = MapperParams::init(6, {5, 5, 5}, 4, rng);
  const AudioEmbeddings emb{rng.normal_tensor({5, 2, 3})};
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  AudioEmbeddings shuffled{Tensor(emb.values.shape())};
  for (std::size_t s = 0; s < 5; ++s) {
    std::copy(emb.values.row(perm[s]).begin(), emb.values.row(perm[s]).end(),
              shuffled.values.row(s).begin());
  }
  const auto a = map_audio(emb, p);
  const auto b = map_audio(shuffled, p);
  for (std::size_t s = 0; s < 5; ++s) {
    EXPECT_TRUE(std::equal(b.token(s).begin(), b.token(s).end(), a.token(perm[s]).begin()));
  }
}

TEST(Mapper, ShapeErrors) {
  Rng rng(54);
  const MapperParams p = MapperParams::init(6, {4, 4, 4}, 4, rng);
  EXPECT_THROW(map_audio(AudioEmbeddings{Tensor({2, 2, 2})}, p), ShapeError);
  EXPECT_THROW(map_audio(AudioEmbeddings{Tensor({2, 3, 2})}, p), ShapeError);
}

TEST(Mapper, GradientCheck) {
  Rng rng(55);
  MapperParams p = MapperParams::init(6, {5, 4, 5}, 4, rng);
  const AudioEmbeddings emb{rng.normal_tensor({3, 2, 3})};
  const Tensor weights = rng.normal_tensor({3, 2, 2});
  const auto f = [&](std::span<const double> flat) {
    MapperParams q = p;
    assign(q, flat);
    MapperCache cache;
    const auto t = map_audio(emb, q, &cache);
    double loss = 0.0;
    for (std::size_t k = 0; k < t.values.size(); ++k) {
      loss += weights[k] * t.values[k];
    }
    MapperParams g = MapperParams::zeros_like(q);
    map_audio_backward(q, cache, weights.data(), g);
    return ValueGrad{loss, flatten(g)};
  };
  EXPECT_LE(grad_check(f, flatten(p), 1e-6), 1e-6);
}

TEST(Windows, Resolutions) {
  EXPECT_EQ(resolutions(1), 1u);
  EXPECT_EQ(resolutions(2), 2u);
  EXPECT_EQ(resolutions(16), 5u);
  EXPECT_EQ(resolutions(24), 5u);
  EXPECT_EQ(resolutions(31), 5u);
  EXPECT_EQ(resolutions(32), 6u);
  EXPECT_THROW(resolutions(0), DomainError);
}

TEST(Windows, Average) {
  const auto t = scalar_tokens({1.0, 3.0, 5.0});
  EXPECT_EQ(window_average(t, 0, 2), Token{3.0});
  EXPECT_EQ(window_average(t, 1, 1), Token{3.0});
  EXPECT_EQ(window_average(t, 1, 2), Token{4.0});
  EXPECT_THROW(window_average(t, 2, 1), DomainError);
  EXPECT_THROW(window_average(t, 0, 3), DomainError);
}

TEST(Windows, ClampedAtEdges) {
  const auto w = frame_windows(1, 8);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[0].first, 0u);
  EXPECT_EQ(w[0].last, 2u);
  EXPECT_EQ(w[1].first, 0u); // half-width 2
  EXPECT_EQ(w[1].last, 3u);
  EXPECT_EQ(w[3].first, 0u);
  EXPECT_EQ(w[3].last, 7u);
  const auto end = frame_windows(23, 24);
  EXPECT_EQ(end[4].first, 7u);
  EXPECT_EQ(end[4].last, 23u);
}

TEST(Windows, InRangeAndContainFrame) {
  for (std::size_t L = 1; L <= 70; ++L) {
    for (std::size_t i = 0; i < L; ++i) {
      const auto ws = frame_windows(i, L);
      ASSERT_EQ(ws.size(), resolutions(L));
      for (const Window &w : ws) {
        EXPECT_LE(w.first, i);
        EXPECT_GE(w.last, i);
        EXPECT_LT(w.last, L);
      }
    }
  }
}

TEST(Windows, CentredFrameLargestWindowCoversAll) {
  for (std::size_t L : {2u, 4u, 8u, 16u, 32u, 64u}) {
    const auto ws = frame_windows(L / 2, L);
    EXPECT_EQ(ws.back().first, 0u);
    EXPECT_EQ(ws.back().last, L - 1);
  }
}

TEST(Windows, SingleSegment) {
  const auto w = frame_windows(0, 1);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].first, 0u);
  EXPECT_EQ(w[0].last, 0u);
}

TEST(Pooling, SingleSegmentReturnsToken) {
  Rng rng(56);
  const auto t = make_tokens(1, 2, 3, rng);
  const auto p = PoolingParams::init(6, 4, 4, rng);
  const auto r = attentive_pool(t, p);
  EXPECT_EQ(r.distribution, std::vector<double>{1.0});
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(r.token[k], t.values[k]);
  }
}

TEST(Pooling, IdenticalTokensUniform) {
  Rng rng(57);
  Tensor one = rng.normal_tensor({1, 2, 3});
  Tensor many({5, 2, 3});
  for (std::size_t s = 0; s < 5; ++s) {
    std::copy(one.values().begin(), one.values().end(), many.row(s).begin());
  }
  const auto p = PoolingParams::init(6, 4, 4, rng);
  const auto r = attentive_pool(TempoTokens{many}, p);
  for (double x : r.distribution) {
    EXPECT_NEAR(x, 0.2, 1e-12);
  }
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_NEAR(r.token[k], one[k], 1e-12);
  }
}

TEST(Pooling, MatchesClosedForm) {
  Rng rng(58);
  for (std::size_t L : {2u, 3u, 7u}) {
    const auto t = make_tokens(L, 2, 3, rng);
    auto p = PoolingParams::init(6, 5, 4, rng);
    p.alpha_local = 0.7;
    p.alpha_cross = -1.3;
    const auto r = attentive_pool(t, p);
    const auto expected = pooling_oracle(t, p);
    for (std::size_t u = 0; u < L; ++u) {
      EXPECT_NEAR(r.distribution[u], expected[u], 1e-12);
    }
  }
}

TEST(Pooling, ConvexCombination) {
  Rng rng(59);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = 1 + rng.below(12);
    const auto t = make_tokens(L, 2, 2, rng);
    const auto p = PoolingParams::init(4, 3, 3, rng);
    const auto r = attentive_pool(t, p);
    double sum = 0.0;
    for (double x : r.distribution) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (std::size_t k = 0; k < 4; ++k) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t u = 0; u < L; ++u) {
        lo = std::min(lo, t.token(u)[k]);
        hi = std::max(hi, t.token(u)[k]);
      }
      EXPECT_GE(r.token[k], lo - 1e-12);
      EXPECT_LE(r.token[k], hi + 1e-12);
    }
  }
}

TEST(Pooling, ZeroTokensStayFinite) {
  Rng rng(60);
  const auto p = PoolingParams::init(4, 3, 3, rng);
  const auto r = attentive_pool(TempoTokens{Tensor({4, 2, 2})}, p);
  for (double x : r.distribution) {
    EXPECT_NEAR(x, 0.25, 1e-12);
  }
}

TEST(Pooling, WidthMismatch) {
  Rng rng(61);
  const auto p = PoolingParams::init(5, 3, 3, rng);
  EXPECT_THROW(attentive_pool(make_tokens(3, 2, 2, rng), p), ShapeError);
}

TEST(Condition, SlotsPerFrame) {
  Rng rng(62);
  const auto t = make_tokens(24, 2, 8, rng);
  const auto p = PoolingParams::init(16, 4, 4, rng);
  const auto c = build_condition(t, p);
  EXPECT_EQ(c.frame_count(), 24u);
  EXPECT_EQ(c.tokens_per_frame(), 6u);
  EXPECT_EQ(c.token_dim(), 16u);
  // Last slot is the shared attentive token.
  for (std::size_t i = 1; i < 24; ++i) {
    EXPECT_EQ(c.frames[i].back(), c.frames[0].back());
  }
  EXPECT_EQ(c.frames[5][0], window_average(t, 4, 6));
  const auto single = single_vector_condition(t);
  EXPECT_EQ(single.tokens_per_frame(), 1u);
  EXPECT_EQ(single.frames[3][0], window_average(t, 0, 23));
}

TEST(Condition, ValidateRejectsRagged) {
  ConditioningSequence c;
  EXPECT_THROW(c.validate(), ValidationError);
  c.frames = {{{1.0, 2.0}}, {{1.0, 2.0}, {3.0, 4.0}}};
  EXPECT_THROW(c.validate(), ValidationError);
  c.frames = {{{1.0, 2.0}}, {{1.0}}};
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Condition, GradientCheck) {
  Rng rng(63);
  const auto tokens = make_tokens(5, 2, 2, rng);
  PoolingParams p = PoolingParams::init(4, 3, 3, rng);
  std::vector<std::vector<Token>> weights(5);
  for (auto &frame : weights) {
    for (std::size_t k = 0; k < resolutions(5) + 1; ++k) {
      Token w(4);
      for (double &x : w) {
        x = rng.normal();
      }
      frame.push_back(w);
    }
  }
  const std::size_t n_tok = tokens.values.size();
  std::vector<double> x(tokens.values.values());
  const auto pflat = flatten(p);
  x.insert(x.end(), pflat.begin(), pflat.end());
  const auto f = [&](std::span<const double> flat) {
    TempoTokens t{Tensor(tokens.values.shape(),
                         std::vector<double>(flat.begin(), flat.begin() + n_tok))};
    PoolingParams q = p;
    assign(q, flat.subspan(n_tok));
    PoolingCache cache;
    const auto c = build_condition(t, q, &cache);
    double loss = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t k = 0; k < c.frames[i].size(); ++k) {
        for (std::size_t d = 0; d < 4; ++d) {
          loss += weights[i][k][d] * c.frames[i][k][d];
        }
      }
    }
    std::vector<double> d_tokens(n_tok, 0.0);
    PoolingParams g = PoolingParams::zeros_like(q);
    build_condition_backward(t, q, cache, weights, d_tokens, g);
    const auto gflat = flatten(g);
    d_tokens.insert(d_tokens.end(), gflat.begin(), gflat.end());
    return ValueGrad{loss, d_tokens};
  };
  EXPECT_LE(grad_check(f, x, 1e-6), 1e-6);
}

TEST(Regularization, Values) {
  const auto t = scalar_tokens({2.0, -3.0});
  EXPECT_DOUBLE_EQ(regularization(t, 1.0), 2.5);
  EXPECT_DOUBLE_EQ(regularization(t, 0.1), 0.25);
  EXPECT_EQ(regularization(t, 0.0), 0.0);
  EXPECT_THROW(regularization(t, -1.0), DomainError);
  EXPECT_EQ(regularization(TempoTokens{Tensor({3, 2, 2})}, 1.0), 0.0);
}

TEST(Regularization, GradientAwayFromZero) {
  Rng rng(64);
  Tensor v = rng.normal_tensor({4, 1, 3});
  for (double &x : v.values()) {
    x += x > 0 ? 0.1 : -0.1;
  }
  const auto f = [&](std::span<const double> flat) {
    TempoTokens t{Tensor(v.shape(), std::vector<double>(flat.begin(), flat.end()))};
    std::vector<double> g(flat.size(), 0.0);
    regularization_backward(t, 0.3, 1.0, g);
    return ValueGrad{regularization(t, 0.3), g};
  };
  EXPECT_LE(grad_check(f, v.values(), 1e-6), 1e-8);
}
