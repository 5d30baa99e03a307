#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "tsep/mixture.hpp"
#include "tsep/toy_corpus.hpp"

namespace tsep {
namespace {

const std::vector<Utterance>& pool() {
  static const auto p = [] {
    ToyCorpusConfig cfg;
    cfg.num_speakers = 6;
    cfg.utterances_per_speaker = 3;
    cfg.min_utterance_s = 2.0;
    cfg.max_utterance_s = 4.0;
    return make_toy_corpus(cfg, 42);
  }();
  return p;
}

Placement place(std::size_t spk, double b, double e, int g) {
  Placement p;
  p.speaker = spk;
  p.begin = static_cast<std::int64_t>(b * 16000);
  p.end = static_cast<std::int64_t>(e * 16000);
  p.segment_index = g;
  return p;
}

TEST(Synthesize, SingleUtteranceIsNormalisedCopy) {
  std::vector<Utterance> one{pool()[0]};
  MixtureConfig cfg;
  cfg.num_speakers = 1;
  cfg.min_len_s = 0.0;
  auto m = synthesize_mixture(one, cfg, 1);
  ASSERT_EQ(m.placements.size(), 1u);
  ASSERT_EQ(m.mix.size(), one[0].audio.size());
  const double gain = db_to_amplitude(-23.0) / rms(one[0].audio.samples);
  for (std::size_t i = 0; i < m.mix.size(); ++i) {
    EXPECT_EQ(m.mix.samples[i], gain * one[0].audio.samples[i]);
  }
  ASSERT_EQ(m.labels.size(), 1u);
  EXPECT_FALSE(m.labels[0].overlapped);
  EXPECT_NEAR(20 * std::log10(rms(m.mix.samples)), -23.0, 1e-9);
}

TEST(Synthesize, ZeroOverlapGivesDisjointSpeakers) {
  MixtureConfig cfg;
  cfg.num_speakers = 2;
  cfg.max_overlap = 0.0;
  cfg.min_len_s = 20.0;
  auto m = synthesize_mixture(pool(), cfg, 3);
  for (const auto& l : m.labels) EXPECT_FALSE(l.overlapped);
  for (std::size_t i = 1; i < m.placements.size(); ++i) {
    EXPECT_GE(m.placements[i].begin, m.placements[i - 1].end);
  }
  // Only frames straddling a hand-over may see both speakers.
  int both = 0;
  for (Eigen::Index t = 0; t < m.activity.cols(); ++t) {
    both += m.activity(0, t) > 0 && m.activity(1, t) > 0;
  }
  EXPECT_LE(both, static_cast<int>(m.placements.size()));
}

TEST(Synthesize, ForcedOverlapMatchesPlacementPlan) {
  ToySpeaker a = make_toy_speakers(2, 5)[0], b = make_toy_speakers(2, 5)[1];
  std::vector<Utterance> two{synthesize_toy_utterance(a, 10.0, 1, "a"),
                             synthesize_toy_utterance(b, 10.0, 2, "b")};
  MixtureConfig cfg;
  cfg.num_speakers = 2;
  cfg.min_len_s = 0.0;
  cfg.fixed_overlap = 0.8;
  auto m = synthesize_mixture(two, cfg, 7);
  ASSERT_EQ(m.placements.size(), 2u);
  EXPECT_NEAR(m.mix.duration_s(), 12.0, 1e-9);
  double overlapped = 0.0;
  for (const auto& l : m.labels) {
    if (l.overlapped && l.speaker == 0) overlapped += l.duration_s();
  }
  EXPECT_DOUBLE_EQ(overlapped, 8.0);
  const double frame = 256.0 / 16000.0;
  int both = 0;
  for (Eigen::Index t = 0; t < m.activity.cols(); ++t) {
    both += m.activity(0, t) > 0 && m.activity(1, t) > 0;
  }
  EXPECT_NEAR(both * frame, 8.0, frame + 1e-9);
}

TEST(Synthesize, DeterministicSourceSumAndErrors) {
  MixtureConfig cfg;
  cfg.num_speakers = 3;
  cfg.min_len_s = 15.0;
  auto a = synthesize_mixture(pool(), cfg, 11);
  auto b = synthesize_mixture(pool(), cfg, 11);
  EXPECT_EQ(a.mix.samples, b.mix.samples);
  EXPECT_EQ(a.activity, b.activity);
  EXPECT_LT(a.source_sum_error(), 1e-6);
  EXPECT_GE(a.mix.duration_s(), 15.0);
  EXPECT_EQ(a.num_speakers(), 3u);
  cfg.num_speakers = 7;
  EXPECT_THROW(synthesize_mixture(pool(), cfg, 1), std::invalid_argument);
  cfg.num_speakers = 2;
  cfg.max_overlap = 1.0;
  EXPECT_THROW(synthesize_mixture(pool(), cfg, 1), std::invalid_argument);
}

TEST(Synthesize, AdjacentOverlapBoundedAndNoSelfOverlap) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MixtureConfig cfg;
    cfg.num_speakers = 2 + seed % 4;
    cfg.min_len_s = 20.0;
    auto m = synthesize_mixture(pool(), cfg, seed);
    for (std::size_t i = 1; i < m.placements.size(); ++i) {
      const auto& p = m.placements[i - 1];
      const auto& q = m.placements[i];
      double ov = std::max<std::int64_t>(0, p.end - q.begin);
      double shorter = std::min(p.end - p.begin, q.end - q.begin);
      EXPECT_LE(ov, 0.8 * shorter + 1);
    }
    for (std::size_t i = 0; i < m.placements.size(); ++i) {
      for (std::size_t j = i + 1; j < m.placements.size(); ++j) {
        if (m.placements[i].speaker != m.placements[j].speaker) continue;
        EXPECT_LE(m.placements[i].end, m.placements[j].begin);
      }
    }
  }
}

TEST(Activity, SilentSourceAndBoundedInterval) {
  std::vector<Waveform> srcs{Waveform::zeros(6 * 16000), Waveform::zeros(6 * 16000)};
  for (std::size_t i = 2 * 16000; i < 4 * 16000; ++i) {
    srcs[1].samples[i] = 0.1 * std::sin(0.05 * static_cast<double>(i));
  }
  StftConfig cfg;
  auto act = compute_activity_labels(srcs, cfg, -40.0);
  EXPECT_EQ(act.row(0).sum(), 0.0);
  for (Eigen::Index t = 0; t < act.cols(); ++t) {
    double center = static_cast<double>(t) * 256.0 / 16000.0;
    bool inside = center >= 2.0 && center <= 4.0;
    bool near_edge = std::abs(center - 2.0) <= 256.0 / 16000.0 ||
                     std::abs(center - 4.0) <= 256.0 / 16000.0;
    if (!near_edge) EXPECT_EQ(act(1, t), inside ? 1.0 : 0.0) << t;
  }
}

TEST(Activity, LabelsComeFromEachCleanSource) {
  std::vector<Waveform> srcs{Waveform::zeros(32000), Waveform::zeros(32000)};
  for (std::size_t i = 0; i < 32000; ++i) {
    srcs[0].samples[i] = 0.1 * std::sin(0.03 * static_cast<double>(i));
    srcs[1].samples[i] = i > 8000 && i < 24000 ? 0.2 * std::cos(0.07 * static_cast<double>(i)) : 0.0;
  }
  StftConfig cfg;
  auto both = compute_activity_labels(srcs, cfg, -40.0);
  std::vector<Waveform> solo0{srcs[0]}, solo1{srcs[1]};
  EXPECT_EQ(both.row(0), compute_activity_labels(solo0, cfg, -40.0).row(0));
  EXPECT_EQ(both.row(1), compute_activity_labels(solo1, cfg, -40.0).row(0));
}

TEST(Decomposition, TwoSpeakerBoundarySweep) {
  std::vector<std::string> spk{"A", "B"};
  std::vector<Placement> pl{place(0, 0, 10, 0), place(1, 6, 16, 0)};
  auto labels = segment_decomposition(pl, spk, 16000);
  ASSERT_EQ(labels.size(), 4u);
  EXPECT_EQ(labels[0].speaker_id, "A");
  EXPECT_DOUBLE_EQ(labels[0].start_s(), 0.0);
  EXPECT_DOUBLE_EQ(labels[0].end_s(), 6.0);
  EXPECT_FALSE(labels[0].overlapped);
  EXPECT_EQ(labels[0].sub_index, 0);
  EXPECT_DOUBLE_EQ(labels[1].start_s(), 6.0);
  EXPECT_DOUBLE_EQ(labels[1].end_s(), 10.0);
  EXPECT_TRUE(labels[1].overlapped);
  EXPECT_EQ(labels[1].sub_index, 1);
  EXPECT_EQ(labels[2].speaker_id, "B");
  EXPECT_TRUE(labels[2].overlapped);
  EXPECT_DOUBLE_EQ(labels[2].end_s(), 10.0);
  EXPECT_FALSE(labels[3].overlapped);
  EXPECT_DOUBLE_EQ(labels[3].end_s(), 16.0);
}

TEST(Decomposition, NoOverlapAndThreeWayOverlap) {
  std::vector<std::string> spk{"A", "B", "C"};
  std::vector<Placement> disjoint{place(0, 0, 2, 0), place(1, 2, 5, 0), place(2, 5, 6, 0)};
  auto l = segment_decomposition(disjoint, spk, 16000);
  ASSERT_EQ(l.size(), 3u);
  for (const auto& x : l) EXPECT_FALSE(x.overlapped);

  std::vector<Placement> three{place(0, 0, 5, 0), place(1, 1, 6, 0), place(2, 2, 4, 0)};
  for (const auto& x : segment_decomposition(three, spk, 16000)) {
    if (x.start_s() >= 2.0 && x.end_s() <= 4.0) EXPECT_TRUE(x.overlapped);
  }
}

TEST(Decomposition, SubSegmentsPartitionEachSegment) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MixtureConfig cfg;
    cfg.num_speakers = 2 + seed % 5;
    cfg.min_len_s = 25.0;
    auto m = synthesize_mixture(pool(), cfg, 100 + seed);
    for (const auto& p : m.placements) {
      std::vector<SegmentLabel> parts;
      for (const auto& l : m.labels) {
        if (l.speaker == p.speaker && l.segment_index == p.segment_index) parts.push_back(l);
      }
      ASSERT_FALSE(parts.empty());
      EXPECT_EQ(parts.front().begin, p.begin);
      EXPECT_EQ(parts.back().end, p.end);
      for (std::size_t i = 1; i < parts.size(); ++i) {
        EXPECT_EQ(parts[i].begin, parts[i - 1].end);
      }
      for (const auto& part : parts) {
        int mid = m.active_count((part.begin + part.end) / 2);
        EXPECT_EQ(part.overlapped, mid >= 2);
      }
    }
  }
}

TEST(Chunk, IdentityShiftAndSourceSum) {
  MixtureConfig cfg;
  cfg.num_speakers = 3;
  cfg.min_len_s = 30.0;
  auto m = synthesize_mixture(pool(), cfg, 21);
  auto whole = chunk(m, m.mix.duration_s(), 5);
  EXPECT_EQ(whole.mix.samples, m.mix.samples);
  EXPECT_EQ(whole.activity, m.activity);

  const std::int64_t off = 10 * 16000;
  auto c = chunk_at(m, off, 12 * 16000);
  EXPECT_LT(c.source_sum_error(), 1e-6);
  for (const auto& l : c.labels) {
    EXPECT_GE(l.begin, 0);
    EXPECT_LE(l.end, 12 * 16000);
  }
  for (const auto& p : m.placements) {
    if (p.begin >= off && p.end <= off + 12 * 16000) {
      bool found = false;
      for (const auto& q : c.placements) found |= q.begin == p.begin - off && q.end == p.end - off;
      EXPECT_TRUE(found);
    }
  }
  auto r = chunk(m, 7.5, 99);
  EXPECT_EQ(r.mix.size(), 7u * 16000 + 8000);
  EXPECT_LT(r.source_sum_error(), 1e-6);
  EXPECT_THROW(chunk(m, m.mix.duration_s() + 1.0, 1), std::invalid_argument);
}

TEST(Manifest, WriteLoadRoundTripAndRttmFixture) {
  MixtureConfig cfg;
  cfg.num_speakers = 2;
  cfg.min_len_s = 8.0;
  auto m = synthesize_mixture(pool(), cfg, 31);
  auto dir = std::filesystem::temp_directory_path() / "tsep_mixture_test";
  std::filesystem::remove_all(dir);
  write_mixture(m, dir, "mix0");
  auto back = load_mixture(dir / "manifest.json");
  EXPECT_EQ(back.speakers, m.speakers);
  ASSERT_EQ(back.labels.size(), m.labels.size());
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    EXPECT_EQ(back.labels[i].begin, m.labels[i].begin);
    EXPECT_EQ(back.labels[i].overlapped, m.labels[i].overlapped);
  }
  EXPECT_EQ(back.source_sum_error(), 0.0);

  auto rttm = read_rttm(dir / "ref.rttm");
  EXPECT_EQ(rttm.recording, "mix0");
  EXPECT_EQ(rttm.turns.size(), m.placements.size());
  std::set<std::string> spk(m.speakers.begin(), m.speakers.end());
  EXPECT_EQ(rttm.speakers(), std::vector<std::string>(spk.begin(), spk.end()));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace tsep
