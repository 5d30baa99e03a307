#include <array>
#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "tsep/embed.hpp"
#include "tsep/toy_corpus.hpp"

namespace tsep {
namespace {

const ToyEncoder& encoder() {
  static const ToyEncoder enc;
  return enc;
}

const std::vector<Utterance>& pool() {
  static const auto p = [] {
    ToyCorpusConfig cfg;
    cfg.num_speakers = 8;
    cfg.utterances_per_speaker = 3;
    cfg.min_utterance_s = 2.0;
    cfg.max_utterance_s = 4.0;
    return make_toy_corpus(cfg, 7);
  }();
  return p;
}

// Mixture built from explicit (speaker, begin_s, utterance) placements.
Mixture hand_mixture(const std::vector<std::string>& ids,
                     const std::vector<std::tuple<std::size_t, double, Utterance>>& plan) {
  Mixture m;
  m.speakers = ids;
  std::int64_t total = 0;
  for (const auto& [k, b, u] : plan) {
    total = std::max<std::int64_t>(total, std::llround(b * 16000) + static_cast<std::int64_t>(u.audio.size()));
  }
  m.mix = Waveform::zeros(static_cast<std::size_t>(total));
  m.sources.assign(ids.size(), Waveform::zeros(static_cast<std::size_t>(total)));
  std::vector<int> count(ids.size(), 0);
  for (const auto& [k, b, u] : plan) {
    Placement p;
    p.speaker = k;
    p.begin = std::llround(b * 16000);
    p.end = p.begin + static_cast<std::int64_t>(u.audio.size());
    p.segment_index = count[k]++;
    for (std::size_t i = 0; i < u.audio.size(); ++i) {
      m.sources[k].samples[static_cast<std::size_t>(p.begin) + i] += u.audio.samples[i];
    }
    m.placements.push_back(p);
  }
  std::sort(m.placements.begin(), m.placements.end(),
            [](const Placement& a, const Placement& b) { return a.begin < b.begin; });
  for (const auto& s : m.sources) {
    for (std::size_t i = 0; i < s.size(); ++i) m.mix.samples[i] += s.samples[i];
  }
  m.labels = segment_decomposition(m);
  return m;
}

TEST(MeanEmbed, SingletonDuplicateAntipodalEmpty) {
  Eigen::VectorXd v(3);
  v << 1.0, 2.0, -2.0;
  auto e = SpeakerEmbedding::normalized(v);
  EXPECT_NEAR(e.values().norm(), 1.0, 1e-12);
  std::vector<SpeakerEmbedding> one{e};
  EXPECT_LT((mean_embed(one).values() - e.values()).norm(), 1e-15);
  std::vector<SpeakerEmbedding> two{e, e};
  EXPECT_LT((mean_embed(two).values() - e.values()).norm(), 1e-15);
  std::vector<SpeakerEmbedding> anti{e, SpeakerEmbedding::normalized(-v)};
  try {
    mean_embed(anti);
    FAIL();
  } catch (const std::invalid_argument& ex) {
    EXPECT_NE(std::string(ex.what()).find("degenerate mean"), std::string::npos);
  }
  EXPECT_THROW(mean_embed(std::vector<SpeakerEmbedding>{}), std::invalid_argument);
}

TEST(ToyEncoder, SameSpeakerCloseDisjointBandsFar) {
  auto speakers = make_toy_speakers(4, 3);
  for (const auto& s : speakers) {
    auto u = synthesize_toy_utterance(s, 6.0, 11, "x");
    auto a = encoder().encode(u.audio.slice(0, 3 * 16000));
    auto b = encoder().encode(u.audio.slice(3 * 16000, 6 * 16000));
    EXPECT_GT(a.cosine(b), 0.9) << s.id;
    EXPECT_NEAR(a.values().norm(), 1.0, 1e-9);
  }
  ToySpeaker low{"low", {{400.0, 150.0, 1.0}, {900.0, 150.0, 0.8}}};
  ToySpeaker high{"high", {{3500.0, 300.0, 1.0}, {5500.0, 300.0, 0.8}}};
  auto el = encoder().encode(synthesize_toy_utterance(low, 3.0, 1, "l").audio);
  auto eh = encoder().encode(synthesize_toy_utterance(high, 3.0, 2, "h").audio);
  EXPECT_LT(el.cosine(eh), 0.5);
}

TEST(ToyEncoder, DeterministicAndRejectsSilence) {
  const auto& u = pool()[0];
  EXPECT_EQ(encoder().encode(u.audio), encoder().encode(u.audio));
  try {
    encoder().encode(Waveform::zeros(16000));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("no voiced frames"), std::string::npos);
  }
}

TEST(Sampling, ZeroOverlapMakesV2EqualV1) {
  MixtureConfig cfg;
  cfg.num_speakers = 3;
  cfg.max_overlap = 0.0;
  cfg.min_len_s = 10.0;
  auto m = synthesize_mixture(pool(), cfg, 5);
  for (std::size_t k = 0; k < 3; ++k) {
    auto v1 = sample_embedding(m, k, {SamplingVariant::kV1}, 1, encoder());
    auto v2 = sample_embedding(m, k, {SamplingVariant::kV2}, 1, encoder());
    EXPECT_LT((v1.embedding.values() - v2.embedding.values()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Sampling, V4WithoutOverlapDoseIsV2) {
  MixtureConfig cfg;
  cfg.num_speakers = 3;
  cfg.min_len_s = 12.0;
  auto m = synthesize_mixture(pool(), cfg, 6);
  SamplingStrategy v4{SamplingVariant::kV4};
  v4.overlap_fraction = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    auto a = sample_embedding(m, k, v4, 9, encoder());
    auto b = sample_embedding(m, k, {SamplingVariant::kV2}, 9, encoder());
    if (a.fell_back) continue;
    EXPECT_EQ(a.embedding, b.embedding);
  }
}

TEST(Sampling, FigureOnePattern) {
  auto spk = make_toy_speakers(3, 17);
  auto ua1 = synthesize_toy_utterance(spk[0], 4.0, 1, "A1");
  auto ub1 = synthesize_toy_utterance(spk[1], 2.5, 2, "B1");
  auto ua2 = synthesize_toy_utterance(spk[0], 4.0, 3, "A2");
  auto uc1 = synthesize_toy_utterance(spk[2], 3.0, 4, "C1");
  // A1 [0,4] overlaps B1 [3,5.5]; A2 [6,10] overlaps C1 [9,12].
  auto m = hand_mixture({"A", "B", "C"},
                        {{0, 0.0, ua1}, {1, 3.0, ub1}, {0, 6.0, ua2}, {2, 9.0, uc1}});
  std::vector<const SegmentLabel*> a;
  for (const auto& l : m.labels) {
    if (l.speaker == 0) a.push_back(&l);
  }
  ASSERT_EQ(a.size(), 4u);
  EXPECT_FALSE(a[0]->overlapped);  // A1_0
  EXPECT_TRUE(a[1]->overlapped);   // A1_1
  EXPECT_FALSE(a[2]->overlapped);  // A2_2
  EXPECT_TRUE(a[3]->overlapped);   // A2_3
  EXPECT_EQ(a[2]->sub_index, 2);

  auto seg = [&](double b, double e) {
    return m.mix.slice(static_cast<std::size_t>(b * 16000), static_cast<std::size_t>(e * 16000));
  };
  std::vector<SpeakerEmbedding> v2_parts{encoder().encode(seg(0, 3)), encoder().encode(seg(6, 9))};
  auto v2 = sample_embedding(m, "A", {SamplingVariant::kV2}, 3, encoder());
  EXPECT_EQ(v2.embedding, mean_embed(v2_parts));

  // 10% of each solo part, taken from the adjacent overlapped region.
  auto join = [](Waveform x, const Waveform& y) {
    x.samples.insert(x.samples.end(), y.samples.begin(), y.samples.end());
    return x;
  };
  std::vector<SpeakerEmbedding> v4_parts{encoder().encode(join(seg(0, 3), seg(3, 3.3))),
                                         encoder().encode(join(seg(6, 9), seg(9, 9.3)))};
  auto v4 = sample_embedding(m, "A", {SamplingVariant::kV4}, 3, encoder());
  EXPECT_LT((v4.embedding.values() - mean_embed(v4_parts).values()).norm(), 1e-12);

  auto v1 = sample_embedding(m, "A", {SamplingVariant::kV1}, 3, encoder());
  std::vector<SpeakerEmbedding> v1_parts{encoder().encode(ua1.audio), encoder().encode(ua2.audio)};
  EXPECT_LT((v1.embedding.values() - mean_embed(v1_parts).values()).norm(), 1e-12);

  auto v3 = sample_embedding(m, "A", {SamplingVariant::kV3}, 3, encoder());
  EXPECT_NEAR(v3.embedding.values().norm(), 1.0, 1e-9);
  EXPECT_GT(v3.embedding.cosine(v2.embedding), 0.9);
  EXPECT_THROW(sample_embedding(m, "Z", {SamplingVariant::kV1}, 3, encoder()),
               std::invalid_argument);
}

TEST(Sampling, FullyOverlappedSpeakerFallsBackToV1) {
  auto spk = make_toy_speakers(2, 19);
  auto long_a = synthesize_toy_utterance(spk[0], 6.0, 1, "a");
  auto short_b = synthesize_toy_utterance(spk[1], 2.0, 2, "b");
  auto m = hand_mixture({"A", "B"}, {{0, 0.0, long_a}, {1, 2.0, short_b}});
  auto r = sample_embedding(m, 1, {SamplingVariant::kV2}, 1, encoder());
  EXPECT_TRUE(r.fell_back);
  EXPECT_EQ(r.embedding, sample_embedding(m, 1, {SamplingVariant::kV1}, 1, encoder()).embedding);
}

TEST(Sampling, UniformMixFrequenciesPassChiSquare) {
  std::array<int, 4> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto v = resolve_variant(SamplingVariant::kUniformMix, static_cast<std::uint64_t>(i), i % 5);
    counts[static_cast<int>(v)]++;
  }
  double chi2 = 0.0;
  for (int c : counts) {
    EXPECT_NEAR(c / static_cast<double>(draws), 0.25, 0.02);
    chi2 += (c - draws / 4.0) * (c - draws / 4.0) / (draws / 4.0);
  }
  EXPECT_LT(chi2, 11.345);  // chi-square, 3 dof, alpha = 0.01
  EXPECT_EQ(resolve_variant(SamplingVariant::kV3, 5, 1), SamplingVariant::kV3);
}

TEST(Sampling, V4IsNoisierThanV2OnAverage) {
  double sum_v2 = 0.0, sum_v4 = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    MixtureConfig cfg;
    cfg.num_speakers = 2 + seed % 3;
    cfg.min_len_s = 10.0;
    auto m = synthesize_mixture(pool(), cfg, 1000 + seed);
    for (std::size_t k = 0; k < m.num_speakers(); ++k) {
      auto v1 = sample_embedding(m, k, {SamplingVariant::kV1}, seed, encoder());
      auto v2 = sample_embedding(m, k, {SamplingVariant::kV2}, seed, encoder());
      auto v4 = sample_embedding(m, k, {SamplingVariant::kV4}, seed, encoder());
      if (v2.fell_back) continue;
      sum_v2 += v2.embedding.cosine(v1.embedding);
      sum_v4 += v4.embedding.cosine(v1.embedding);
      ++n;
      EXPECT_NEAR(v4.embedding.values().norm(), 1.0, 1e-9);
    }
  }
  ASSERT_GT(n, 100);
  EXPECT_LT(sum_v4 / n, sum_v2 / n);
}

TEST(PrecomputedEncoder, ReadsLittleEndianVectorsBySpan) {
  auto dir = std::filesystem::temp_directory_path();
  std::vector<EmbeddingSpan> spans{{0.0, 2.0}, {2.0, 4.0}};
  Eigen::VectorXd a(4), b(4);
  a << 1, 0, 0, 0;
  b << 0, 0.6, 0.8, 0;
  std::vector<SpeakerEmbedding> es{SpeakerEmbedding::normalized(a), SpeakerEmbedding::normalized(b)};
  write_precomputed_embeddings(dir / "emb.f32", dir / "emb.json", "rec", spans, es);
  PrecomputedEncoder enc(dir / "emb.f32", dir / "emb.json");
  EXPECT_EQ(enc.dim(), 4);
  EXPECT_EQ(enc.size(), 2u);
  Waveform dummy = Waveform::zeros(64000);
  EXPECT_NEAR(enc.encode_span(dummy, 2.0, 4.0).cosine(es[1]), 1.0, 1e-7);
  EXPECT_THROW(enc.encode_span(dummy, 1.0, 3.0), std::out_of_range);
  EXPECT_THROW(enc.encode(dummy), std::logic_error);
}

}  // namespace
}  // namespace tsep
