#include "tsep/dataset.hpp"

#include <stdexcept>
#include <string>

#include "tsep/random.hpp"

namespace tsep {

namespace {

constexpr int kChunkAttempts = 64;

bool every_speaker_present(const Mixture& c, double min_s) {
  std::vector<std::int64_t> dur(c.num_speakers(), 0);
  for (const auto& p : c.placements) dur[p.speaker] += p.end - p.begin;
  const auto need = static_cast<std::int64_t>(min_s * c.sample_rate());
  for (auto d : dur)
    if (d < need) return false;
  return true;
}

}  // namespace

std::vector<Mixture> make_chunks(std::span<const Utterance> pool,
                                 const ChunkSetConfig& cfg, std::uint64_t seed) {
  std::vector<Mixture> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    Mixture m = synthesize_mixture(pool, cfg.mixture, derive_seed(seed, {i, 0}));
    // Redraw the offset until every speaker has some speech in the chunk.
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt == kChunkAttempts) {
        throw std::runtime_error("could not cut a " + std::to_string(cfg.chunk_s) +
                                 " s chunk containing every speaker");
      }
      Mixture c = chunk(m, cfg.chunk_s, derive_seed(seed, {i, 1, static_cast<std::uint64_t>(attempt)}));
      if (every_speaker_present(c, cfg.min_speaker_s)) {
        out.push_back(std::move(c));
        break;
      }
    }
  }
  return out;
}

std::vector<TrainExample> make_examples(std::span<const Mixture> chunks,
                                        const StftConfig& cfg,
                                        double activity_threshold_db) {
  std::vector<TrainExample> out;
  out.reserve(chunks.size());
  for (const auto& m : chunks) out.push_back(make_example(m, cfg, activity_threshold_db));
  return out;
}

double SamplingStats::chi_square() const {
  const double n = static_cast<double>(total());
  if (n == 0.0) return 0.0;
  const double expected = n / 4.0;
  double chi = 0.0;
  for (std::size_t c : used) chi += (c - expected) * (c - expected) / expected;
  return chi;
}

EmbeddingProvider sampling_provider(std::span<const Mixture> chunks,
                                    const SamplingStrategy& strategy,
                                    const SpeakerEncoder& encoder,
                                    std::uint64_t seed, bool freeze,
                                    SamplingStats* stats) {
  strategy.validate();
  return [chunks, strategy, &encoder, seed, freeze, stats](std::size_t i, int epoch) {
    const Mixture& m = chunks[i];
    const std::uint64_t s =
        derive_seed(seed, {i, freeze ? 0u : static_cast<std::uint64_t>(epoch) + 1});
    std::vector<SpeakerEmbedding> out;
    for (std::size_t k = 0; k < m.num_speakers(); ++k) {
      SampledEmbedding e = sample_embedding(m, k, strategy, s, encoder);
      if (stats != nullptr) {
        ++stats->used[static_cast<std::size_t>(e.used)];
        if (e.fell_back) ++stats->fallbacks;
      }
      out.push_back(std::move(e.embedding));
    }
    return out;
  };
}

}  // namespace tsep
