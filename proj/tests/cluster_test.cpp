#include <algorithm>
#include <numeric>
#include <map>
#include <random>
#include <iostream>
#include <sstream>

#include <gtest/gtest.h>

#include "tsep/assignment.hpp"
#include "tsep/cluster.hpp"
#include "tsep/log.hpp"
#include "tsep/toy_corpus.hpp"
#include "support/oracles.hpp"

namespace tsep {
namespace {

using namespace tsep::testing;

TEST(ExtractWindows, Examples) {
  auto w6 = extract_windows(Waveform::zeros(6 * 16000));
  EXPECT_EQ(w6, (std::vector<TimeWindow>{{0, 2}, {2, 4}, {4, 6}}));
  auto w5 = extract_windows(Waveform::zeros(5 * 16000));
  EXPECT_EQ(w5, (std::vector<TimeWindow>{{0, 2}, {2, 4}, {4, 5}}));
  auto w45 = extract_windows(Waveform::zeros(72000));
  EXPECT_EQ(w45, (std::vector<TimeWindow>{{0, 2}, {2, 4}}));
  EXPECT_THROW(extract_windows(Waveform{}), std::invalid_argument);
}

TEST(ExtractWindows, ContiguousAndNonOverlapping) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(0.1, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    double dur = d(rng);
    auto ws = extract_windows(dur);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      EXPECT_LE(ws[i].end_s, dur + 1e-9);
      EXPECT_GE(ws[i].duration_s(), 1.0 - 1e-9);
      EXPECT_LE(ws[i].duration_s(), 2.0 + 1e-9);
      if (i > 0) EXPECT_DOUBLE_EQ(ws[i].start_s, ws[i - 1].end_s);
    }
    double covered = ws.empty() ? 0.0 : ws.back().end_s;
    EXPECT_LT(dur - covered, 1.0 + 1e-9);
  }
}

TEST(OverlapFilter, ConstantDetectors) {
  auto ws = extract_windows(20.0);
  EXPECT_EQ(overlap_filter(ws, ConstantOverlapDetector(FrameClass::kSingle)), ws);
  EXPECT_TRUE(overlap_filter(ws, ConstantOverlapDetector(FrameClass::kMulti)).empty());
  EXPECT_TRUE(overlap_filter(ws, ConstantOverlapDetector(FrameClass::kNonSpeech)).empty());
}

TEST(OverlapFilter, OracleMatchesLabelBasedOverlapFraction) {
  ToyCorpusConfig cc;
  cc.num_speakers = 4;
  cc.utterances_per_speaker = 4;
  auto pool = make_toy_corpus(cc, 11);
  std::size_t removed = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    MixtureConfig mc;
    mc.num_speakers = 2;
    mc.min_len_s = 20.0;
    Mixture m = synthesize_mixture(pool, mc, seed);
    OracleOverlapDetector det(m);
    auto ws = extract_windows(m.mix);
    auto kept = overlap_filter(ws, det);

    // Independent count: 10 ms frames whose centre falls in an overlapped
    // sub-segment or in no sub-segment at all.
    std::vector<TimeWindow> expect;
    for (const auto& w : ws) {
      int n = static_cast<int>(std::lround(w.duration_s() / 0.01));
      int not_single = 0;
      for (int i = 0; i < n; ++i) {
        double c = w.start_s + (i + 0.5) * 0.01;
        auto s = static_cast<std::int64_t>(std::floor(c * 16000));
        bool solo = std::any_of(m.labels.begin(), m.labels.end(), [&](const SegmentLabel& l) {
          return !l.overlapped && s >= l.begin && s < l.end;
        });
        not_single += !solo;
      }
      if (static_cast<double>(not_single) / n <= 0.5) expect.push_back(w);
    }
    EXPECT_EQ(kept, expect) << "seed " << seed;
    removed += ws.size() - kept.size();
  }
  EXPECT_GT(removed, 0u);
}

TEST(Affinity, InvariantsHold) {
  auto es = blobs(5, 6, 0.5, 1, nullptr);
  auto a = AffinityMatrix::cosine(es);
  EXPECT_NO_THROW(a.validate());
  EXPECT_GE(a.values.minCoeff(), 0.0);
  AffinityMatrix bad{Eigen::MatrixXd::Constant(2, 2, 0.5)};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(SpectralCluster, TwoOrthogonalBlobsPartitionPerfectly) {
  std::vector<int> truth;
  auto es = blobs(10, 8, 0.05, 5, &truth);
  auto r = spectral_cluster(es);
  EXPECT_EQ(r.k_est, 2);
  EXPECT_TRUE(same_partition(r.labels, truth));
  EXPECT_DOUBLE_EQ(cluster_purity(r.labels, truth), 1.0);
  for (int l : r.labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, r.k_est);
  }
}

TEST(SpectralCluster, IdenticalEmbeddingsGiveOneCluster) {
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(5, 1.0, 2.0);
  std::vector<SpeakerEmbedding> es(7, SpeakerEmbedding::normalized(v));
  auto r = spectral_cluster(es);
  EXPECT_EQ(r.k_est, 1);
  EXPECT_EQ(r.labels, std::vector<int>(7, 0));
  EXPECT_THROW(spectral_cluster(std::span(es).first(1)), std::invalid_argument);
}

TEST(SpectralCluster, PermutationEquivariance) {
  std::vector<int> truth;
  auto es = blobs(8, 6, 0.2, 9, &truth);
  auto base = spectral_cluster(es);
  std::vector<std::size_t> perm(es.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<SpeakerEmbedding> pe;
    for (auto i : perm) pe.push_back(es[i]);
    auto r = spectral_cluster(pe);
    ASSERT_EQ(r.k_est, base.k_est);
    std::vector<int> unpermuted(es.size());
    for (std::size_t j = 0; j < perm.size(); ++j) unpermuted[perm[j]] = r.labels[j];
    EXPECT_TRUE(same_partition(unpermuted, base.labels));
  }
}

TEST(SpectralCluster, ScalingTheAffinityChangesNothing) {
  auto es = blobs(6, 5, 0.3, 21, nullptr);
  auto a = AffinityMatrix::cosine(es);
  auto base = spectral_cluster(a);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    AffinityMatrix s{a.values * c};
    auto r = spectral_cluster(s);
    EXPECT_EQ(r.k_est, base.k_est);
    EXPECT_EQ(r.labels, base.labels);
    for (std::size_t i = 0; i < r.eigenvalues.size(); ++i) {
      EXPECT_NEAR(r.eigenvalues[i], base.eigenvalues[i], 1e-9);
    }
  }
}

TEST(SpectralCluster, KnownKGivesKClustersOrWarns) {
  std::vector<int> truth;
  auto es = blobs(6, 6, 0.05, 2, &truth);
  for (int k = 1; k <= 4; ++k) {
    auto r = spectral_cluster(es, k);
    EXPECT_EQ(r.k_est, k);
    int non_empty = 0;
    for (int c = 0; c < k; ++c) non_empty += r.cluster_size(c) > 0;
    EXPECT_TRUE(non_empty == k || r.underpopulated) << k;
  }

  std::ostringstream sink;
  log::set_sink(&sink);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(4);
  std::vector<SpeakerEmbedding> same(3, SpeakerEmbedding::normalized(v));
  auto r = spectral_cluster(same, 2);
  log::set_sink(&std::cerr);
  EXPECT_TRUE(r.underpopulated);
  EXPECT_NE(sink.str().find("cluster_underpopulated"), std::string::npos);
}

TEST(SpectralCluster, SeededAndReproducible) {
  auto es = blobs(10, 6, 0.4, 17, nullptr);
  SpectralClusterConfig cfg;
  cfg.seed = 99;
  auto a = spectral_cluster(es, 3, cfg);
  auto b = spectral_cluster(es, 3, cfg);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Centroid, Examples) {
  Eigen::VectorXd e(3);
  e << 0.2, -0.4, 0.9;
  auto se = SpeakerEmbedding::normalized(e);
  std::vector<SpeakerEmbedding> one{se};
  EXPECT_TRUE(centroid(one).values().isApprox(se.values(), 1e-15));

  Eigen::Vector2d a(1.0, 1.0), b(1.0, -1.0);
  std::vector<SpeakerEmbedding> pair{SpeakerEmbedding::normalized(a),
                                     SpeakerEmbedding::normalized(b)};
  EXPECT_NEAR(centroid(pair).values()(0), 1.0, 1e-12);
  EXPECT_NEAR(centroid(pair).values()(1), 0.0, 1e-12);

  std::vector<SpeakerEmbedding> opposite{SpeakerEmbedding::normalized(a),
                                         SpeakerEmbedding::normalized(-a)};
  EXPECT_THROW(centroid(opposite), std::invalid_argument);
  EXPECT_THROW(centroid(std::span<const SpeakerEmbedding>{}), std::invalid_argument);
}

TEST(Centroid, NoisyCopiesAverageBackToTheDirection) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> noise(0.0, 0.05);
  Eigen::VectorXd base = Eigen::VectorXd::Zero(32);
  for (int i = 0; i < 32; ++i) base(i) = std::sin(0.7 * i + 0.3);
  auto e = SpeakerEmbedding::normalized(base);
  std::vector<SpeakerEmbedding> copies;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd v = e.values();
    for (int d = 0; d < v.size(); ++d) v(d) += noise(rng);
    copies.push_back(SpeakerEmbedding::normalized(v));
  }
  EXPECT_GT(centroid(copies).cosine(e), 0.99);
}

TEST(Purity, FilteringOverlapDoesNotHurt) {
  ToyCorpusConfig cc;
  cc.num_speakers = 10;
  cc.utterances_per_speaker = 4;
  cc.min_utterance_s = 3.0;
  cc.max_utterance_s = 6.0;
  auto pool = make_toy_corpus(cc, 77);
  ToyEncoder enc;
  double with = 0.0, without = 0.0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    MixtureConfig mc;
    mc.num_speakers = 2 + t % 2;
    mc.min_len_s = 20.0;
    Mixture m = synthesize_mixture(pool, mc, 1000 + t);
    OracleOverlapDetector det(m);
    auto purity_of = [&](const std::vector<TimeWindow>& ws) {
      std::vector<SpeakerEmbedding> es;
      std::vector<int> truth;
      for (const auto& w : ws) {
        es.push_back(enc.encode_span(m.mix, w.start_s, w.end_s));
        truth.push_back(dominant_speaker(m, w));
      }
      auto r = spectral_cluster(es, static_cast<int>(m.num_speakers()));
      return cluster_purity(r.labels, truth);
    };
    auto all = extract_windows(m.mix);
    auto kept = overlap_filter(all, det);
    ASSERT_GE(kept.size(), m.num_speakers());
    without += purity_of(all);
    with += purity_of(kept);
  }
  EXPECT_GE(with / trials, without / trials);
}

TEST(ClusterReport, CarriesWindowsLabelsAndPurity) {
  std::vector<TimeWindow> ws{{0, 2}, {2, 4}, {4, 6}};
  ClusterAssignment a;
  a.labels = {0, 1, 0};
  a.k_est = 2;
  std::vector<int> truth{5, 6, 6};
  auto j = cluster_report(ws, a, truth);
  EXPECT_EQ(j["k_est"], 2);
  EXPECT_EQ(j["windows"].size(), 3u);
  EXPECT_EQ(j["windows"][1]["label"], 1);
  EXPECT_NEAR(j["purity"].get<double>(), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(j["clusters"][0]["purity"].get<double>(), 0.5, 1e-12);
  EXPECT_FALSE(cluster_report(ws, a).contains("purity"));
}

TEST(Assignment, HungarianMatchesExhaustive) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 300; ++trial) {
    int r = 1 + trial % 6, c = 1 + (trial / 6) % 6;
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = std::floor(u(rng));
    auto h = min_cost_assignment(m);
    auto e = min_cost_assignment_exhaustive(m);
    EXPECT_NEAR(h.cost, e.cost, 1e-9);
    std::vector<char> used(c, 0);
    int assigned = 0;
    for (int i = 0; i < r; ++i) {
      int j = h.row_to_col[i];
      if (j < 0) continue;
      EXPECT_FALSE(used[j]);
      used[j] = 1;
      ++assigned;
    }
    EXPECT_EQ(assigned, std::min(r, c));
  }
}

}  // namespace
}  // namespace tsep
