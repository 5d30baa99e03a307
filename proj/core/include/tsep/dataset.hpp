// Training sets of mixture chunks and the embedding providers that feed them.

#ifndef TSEP_DATASET_HPP_
#define TSEP_DATASET_HPP_

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tsep/embed.hpp"
#include "tsep/mixture.hpp"
#include "tsep/train.hpp"

namespace tsep {

struct ChunkSetConfig {
  MixtureConfig mixture;
  std::size_t count = 8;  // chunks
  double chunk_s = 37.0;
  double min_speaker_s = 0.5;  // speech each speaker must have in a chunk
};

// count chunks, each cut from its own synthesized mixture at an offset where
// every speaker talks for at least min_speaker_s.
std::vector<Mixture> make_chunks(std::span<const Utterance> pool,
                                 const ChunkSetConfig& cfg, std::uint64_t seed);

std::vector<TrainExample> make_examples(std::span<const Mixture> chunks,
                                        const StftConfig& cfg,
                                        double activity_threshold_db = -40.0);

// Concrete variants drawn so far, indexed V1..V4.
struct SamplingStats {
  std::array<std::size_t, 4> used{};
  std::size_t fallbacks = 0;
  std::size_t total() const { return used[0] + used[1] + used[2] + used[3]; }
  // Pearson statistic against equal frequencies (3 degrees of freedom).
  double chi_square() const;
};

// Embedding per (chunk, speaker) drawn with the strategy. Draws are redone
// every epoch unless frozen. The mixtures, encoder and stats must outlive it.
EmbeddingProvider sampling_provider(std::span<const Mixture> chunks,
                                    const SamplingStrategy& strategy,
                                    const SpeakerEncoder& encoder,
                                    std::uint64_t seed, bool freeze = false,
                                    SamplingStats* stats = nullptr);

}  // namespace tsep

#endif  // TSEP_DATASET_HPP_
