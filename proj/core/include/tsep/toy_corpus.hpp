// Deterministic synthetic "speakers": band-limited noise shaped by a
// speaker-specific spectral envelope with syllable-rate amplitude
// modulation. Speakers are separable by spectral envelope alone.

#ifndef TSEP_TOY_CORPUS_HPP_
#define TSEP_TOY_CORPUS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "tsep/mixture.hpp"

namespace tsep {

struct SpectralBand {
  double center_hz = 1000.0;
  double width_hz = 200.0;  // Gaussian standard deviation
  double gain = 1.0;
};

struct ToySpeaker {
  std::string id;
  std::vector<SpectralBand> bands;
  double floor = 0.02;       // envelope floor relative to the peak
  double am_rate_hz = 4.0;   // amplitude modulation rate
  double am_depth = 0.8;     // 0 = steady, 1 = fully gated
  std::uint64_t seed = 0;    // vocabulary / noise stream
};

struct ToyCorpusConfig {
  std::size_t num_speakers = 16;
  std::size_t utterances_per_speaker = 6;
  double min_utterance_s = 3.0;
  double max_utterance_s = 8.0;
  int sample_rate = kDefaultSampleRate;
};

// Spectral envelope value at frequency hz.
double envelope(const ToySpeaker& s, double hz);

std::vector<ToySpeaker> make_toy_speakers(std::size_t n, std::uint64_t seed);

Utterance synthesize_toy_utterance(const ToySpeaker& speaker, double duration_s,
                                   std::uint64_t seed, const std::string& id,
                                   int sample_rate = kDefaultSampleRate);

std::vector<Utterance> make_toy_corpus(const ToyCorpusConfig& cfg,
                                       std::uint64_t seed);

}  // namespace tsep

#endif  // TSEP_TOY_CORPUS_HPP_
