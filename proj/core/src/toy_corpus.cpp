#include "tsep/toy_corpus.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace tsep {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

double envelope(const ToySpeaker& s, double hz) {
  double e = 0.0;
  for (const auto& b : s.bands) {
    double z = (hz - b.center_hz) / b.width_hz;
    e += b.gain * std::exp(-0.5 * z * z);
  }
  return e + s.floor;
}

std::vector<ToySpeaker> make_toy_speakers(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double lo = hz_to_mel(150.0), hi = hz_to_mel(6500.0);
  std::uniform_real_distribution<double> mel(lo, hi);
  std::uniform_real_distribution<double> width(0.08, 0.16);
  std::uniform_real_distribution<double> gain(0.6, 1.0);
  std::uniform_real_distribution<double> rate(2.5, 5.5);
  std::vector<ToySpeaker> out;
  for (std::size_t i = 0; i < n; ++i) {
    ToySpeaker s;
    s.id = "spk" + std::to_string(i);
    s.seed = rng();
    for (int b = 0; b < 3; ++b) {
      double c = mel_to_hz(mel(rng));
      s.bands.push_back({c, width(rng) * c + 60.0, gain(rng)});
    }
    s.am_rate_hz = rate(rng);
    out.push_back(s);
  }
  return out;
}

Utterance synthesize_toy_utterance(const ToySpeaker& speaker, double duration_s,
                                   std::uint64_t seed, const std::string& id,
                                   int sample_rate) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  std::mt19937_64 rng(seed ^ speaker.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Waveform white = Waveform::zeros(n, sample_rate);
  for (auto& v : white.samples) v = noise(rng);

  StftConfig cfg(512, 128);
  Spectrogram s = stft(white, cfg);
  for (Eigen::Index f = 0; f < s.freqs(); ++f) {
    double hz = static_cast<double>(f) * sample_rate / cfg.window_len();
    s.bins.col(f) *= envelope(speaker, hz);
  }
  Waveform shaped = istft(s);

  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double ph = phase(rng);
  for (std::size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / sample_rate;
    double am = 1.0 - speaker.am_depth * 0.5 *
                          (1.0 + std::sin(2.0 * std::numbers::pi * speaker.am_rate_hz * t + ph));
    shaped.samples[i] *= am;
  }

  Utterance u;
  u.speaker_id = speaker.id;
  u.utterance_id = id;
  u.audio = std::move(shaped);
  // Pseudo-words from a small per-speaker vocabulary, roughly 2.5 per second.
  std::mt19937_64 vocab(speaker.seed);
  std::vector<std::string> words;
  for (int w = 0; w < 12; ++w) words.push_back(speaker.id + "w" + std::to_string(vocab() % 1000));
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  auto count = static_cast<std::size_t>(std::max(1.0, std::round(duration_s * 2.5)));
  for (std::size_t w = 0; w < count; ++w) u.transcript.push_back(words[pick(rng)]);
  return u;
}

std::vector<Utterance> make_toy_corpus(const ToyCorpusConfig& cfg, std::uint64_t seed) {
  auto speakers = make_toy_speakers(cfg.num_speakers, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> dur(cfg.min_utterance_s, cfg.max_utterance_s);
  std::vector<Utterance> pool;
  for (const auto& s : speakers) {
    for (std::size_t u = 0; u < cfg.utterances_per_speaker; ++u) {
      double d = dur(rng);
      pool.push_back(synthesize_toy_utterance(s, d, rng(),
                                              s.id + "_u" + std::to_string(u),
                                              cfg.sample_rate));
    }
  }
  return pool;
}

}  // namespace tsep
