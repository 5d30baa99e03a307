// Small toy corpus, chunk set and network shared by the training tests.

#ifndef TSEP_TESTS_TOY_SETUP_HPP_
#define TSEP_TESTS_TOY_SETUP_HPP_

#include "tsep/dataset.hpp"
#include "tsep/toy_corpus.hpp"

namespace tsep::testing {

struct ToySetup {
  StftConfig stft{256, 128};
  std::vector<Utterance> pool;
  std::vector<Mixture> chunks;
  std::vector<TrainExample> examples;
  ToyEncoder encoder;
  TsNetDims dims;
};

inline ToyCorpusConfig toy_corpus_config() {
  ToyCorpusConfig cc;
  cc.num_speakers = 12;
  cc.utterances_per_speaker = 4;
  cc.min_utterance_s = 2.0;
  cc.max_utterance_s = 4.0;
  return cc;
}

inline ChunkSetConfig toy_chunk_config(const StftConfig& stft, std::size_t count = 16,
                                       std::size_t speakers = 2) {
  ChunkSetConfig cs;
  cs.mixture.num_speakers = speakers;
  cs.mixture.min_len_s = 12.0;
  cs.mixture.activity.stft = stft;
  cs.count = count;
  cs.chunk_s = 6.0;
  return cs;
}

inline void build_toy_setup(ToySetup& s, std::uint64_t seed, std::size_t count = 16) {
  s.pool = make_toy_corpus(toy_corpus_config(), seed);
  s.chunks = make_chunks(s.pool, toy_chunk_config(s.stft, count), seed + 1);
  s.examples = make_examples(s.chunks, s.stft);
  s.dims.F = static_cast<Eigen::Index>(s.stft.num_bins());
  s.dims.E = s.encoder.dim();
  s.dims.R = 32;
}

}  // namespace tsep::testing

#endif  // TSEP_TESTS_TOY_SETUP_HPP_
