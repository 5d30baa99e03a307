#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "tsep/infer.hpp"
#include "support/oracles.hpp"

namespace tsep {
namespace {

using namespace tsep::testing;

constexpr int kSr = 16000;

SpeechSegment seg(double a, double b) {
  return {std::llround(a * kSr), std::llround(b * kSr), kSr};
}

Waveform tone(double len_s, double on_s, double off_s, double amp = 0.9) {
  auto n = static_cast<std::size_t>(std::llround(len_s * kSr));
  Waveform w = Waveform::zeros(n);
  for (std::size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / kSr;
    if (t >= on_s && t < off_s) w.samples[i] = amp * std::sin(2 * std::numbers::pi * 440 * t);
  }
  return w;
}

TEST(FrameVad, SilenceToneAndBoundedTone) {
  auto silent = frame_vad(Waveform::zeros(kSr));
  EXPECT_EQ(silent.decisions.size(), 34u);  // ceil(1 s / 30 ms)
  EXPECT_TRUE(std::all_of(silent.decisions.begin(), silent.decisions.end(), [](auto v) { return v == 0; }));
  auto full = frame_vad(tone(1.0, 0.0, 1.0));
  EXPECT_TRUE(std::all_of(full.decisions.begin(), full.decisions.end(), [](auto v) { return v == 1; }));

  auto v = frame_vad(tone(3.0, 1.0, 2.0));
  ASSERT_EQ(v.decisions.size(), 100u);
  // Frames [0.99, 1.02) through [1.98, 2.01) intersect the tone.
  for (std::size_t l = 0; l < v.decisions.size(); ++l) {
    EXPECT_EQ(v.decisions[l], l >= 33 && l <= 66 ? 1 : 0) << "frame " << l;
  }
}

TEST(MergeSegments, Examples) {
  const std::int64_t len = 10 * kSr;
  auto m = merge_segments({seg(0, 1.0), seg(1.5, 2.0)}, len);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0], seg(0, 2.01));

  auto exact = merge_segments({seg(1.0, 2.0), seg(2.8, 4.0)}, len);
  ASSERT_EQ(exact.size(), 2u);
  EXPECT_EQ(exact[0], seg(0.99, 2.01));
  EXPECT_EQ(exact[1], seg(2.79, 4.01));

  EXPECT_TRUE(merge_segments({seg(3.0, 3.4)}, len).empty());
  auto kept = merge_segments({seg(3.0, 3.5)}, len);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0], seg(2.99, 3.51));
  // Padding is clamped to the signal.
  auto edge = merge_segments({seg(9.2, 10.0)}, len);
  EXPECT_EQ(edge[0], seg(9.19, 10.0));
}

TEST(MergeSegments, RandomStreamsOrderIndependentAndRoundTrip) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t frames = 50 + rng() % 700;
    const double p_on = 0.2 + 0.6 * static_cast<double>(rng() % 100) / 100.0;
    VadFrames v;
    v.frame_len = 480;
    v.num_samples = frames * 480 - rng() % 480;
    v.decisions.resize(frames);
    std::bernoulli_distribution stay(0.9), on(p_on);
    bool state = on(rng);
    for (auto& d : v.decisions) {
      if (!stay(rng)) state = on(rng);
      d = state;
    }
    const auto len = static_cast<std::int64_t>(v.num_samples);
    auto runs = vad_runs(v);
    auto segs = group_and_merge(v);
    auto shuffled = runs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    ASSERT_EQ(merge_segments(shuffled, len), segs);
    ASSERT_EQ(merge_backwards(runs, len), segs);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      ASSERT_GE(segs[i].length(), 8000);
      ASSERT_GE(segs[i].begin, 0);
      ASSERT_LE(segs[i].end, len);
      if (i > 0) ASSERT_LE(segs[i - 1].end, segs[i].begin);
    }

    Waveform x = Waveform::zeros(v.num_samples);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x.samples[i] = 1e-3 + static_cast<double>((i * 2654435761u + trial) % 1000003) * 1e-6;
    }
    auto c = concatenate_voiced(x, segs);
    std::int64_t total = 0;
    for (const auto& s : segs) total += s.length();
    ASSERT_EQ(static_cast<std::int64_t>(c.audio.size()), total);
    std::vector<Waveform> sep{c.audio};
    auto back = reinterleave(sep, c.map, x.size());
    std::vector<char> voiced(x.size(), 0);
    for (const auto& s : segs) std::fill(voiced.begin() + s.begin, voiced.begin() + s.end, 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      ASSERT_EQ(back[0].samples[i], voiced[i] ? x.samples[i] : 0.0);
    }
  }
}

TEST(Concatenate, IdentityTwoSegmentsAndErrors) {
  Waveform x(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  std::vector<SpeechSegment> whole{{0, 8, kSr}};
  auto c = concatenate_voiced(x, whole);
  EXPECT_EQ(c.audio.samples, x.samples);
  std::vector<SpeechSegment> two{{1, 3, kSr}, {5, 7, kSr}};
  EXPECT_EQ(concatenate_voiced(x, two).audio.samples, (std::vector<double>{2, 3, 6, 7}));
  std::vector<SpeechSegment> overlap{{1, 4, kSr}, {3, 6, kSr}};
  EXPECT_THROW(concatenate_voiced(x, overlap), std::invalid_argument);
  std::vector<SpeechSegment> outside{{6, 9, kSr}};
  EXPECT_THROW(concatenate_voiced(x, outside), std::invalid_argument);

  auto m = concatenate_voiced(x, two).map;
  auto pieces = m.to_original(1, 3, kSr);
  ASSERT_EQ(pieces.size(), 2u);
  EXPECT_EQ(pieces[0], (SpeechSegment{2, 3, kSr}));
  EXPECT_EQ(pieces[1], (SpeechSegment{5, 6, kSr}));
}

TEST(Reinterleave, EmptyIdentityAndMismatch) {
  SilenceMap empty;
  std::vector<Waveform> none{Waveform{}, Waveform{}};
  auto z = reinterleave(none, empty, 5);
  ASSERT_EQ(z.size(), 2u);
  EXPECT_EQ(z[0].samples, std::vector<double>(5, 0.0));
  SilenceMap id{{{0, 4, 0}}};
  std::vector<Waveform> in{Waveform(std::vector<double>{1, 2, 3, 4})};
  EXPECT_EQ(reinterleave(in, id, 4)[0].samples, in[0].samples);
  std::vector<Waveform> bad{Waveform(std::vector<double>{1, 2, 3})};
  EXPECT_THROW(reinterleave(bad, id, 4), std::invalid_argument);
}

TEST(Pipeline, SilentInputHasNoSpeakers) {
  TsNetDims d;
  d.F = 129;
  d.E = 40;
  d.R = 8;
  auto p = TsNetParams::random(d, HeadKind::kMask, 1);
  ToyEncoder enc;
  try {
    run_pipeline(Waveform::zeros(3 * kSr), p, enc, nullptr, {});
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "no speakers detected");
  }
  PipelineConfig wrong;
  wrong.stft = StftConfig(512, 128);
  EXPECT_THROW(run_pipeline(tone(3, 0, 3), p, enc, nullptr, wrong), std::invalid_argument);
}

}  // namespace
}  // namespace tsep
