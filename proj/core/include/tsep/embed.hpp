// Speaker embeddings, the encoder interface and training-time embedding
// sampling strategies (oracle, non-overlap, silence-padded, overlap-noised).

#ifndef TSEP_EMBED_HPP_
#define TSEP_EMBED_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tsep/mixture.hpp"
#include "tsep/signal.hpp"

namespace tsep {

// Unit-L2-norm vector.
class SpeakerEmbedding {
 public:
  // Throws std::invalid_argument("degenerate ...") for zero or non-finite input.
  static SpeakerEmbedding normalized(const Eigen::VectorXd& raw);

  const Eigen::VectorXd& values() const { return values_; }
  Eigen::Index dim() const { return values_.size(); }
  double cosine(const SpeakerEmbedding& o) const { return values_.dot(o.values_); }

  bool operator==(const SpeakerEmbedding& o) const { return values_ == o.values_; }

 private:
  explicit SpeakerEmbedding(Eigen::VectorXd v) : values_(std::move(v)) {}
  Eigen::VectorXd values_;
};

// Arithmetic mean re-normalised to unit length.
SpeakerEmbedding mean_embed(std::span<const SpeakerEmbedding> es);

// Implementations must be deterministic and safe for concurrent const use.
class SpeakerEncoder {
 public:
  virtual ~SpeakerEncoder() = default;
  virtual Eigen::Index dim() const = 0;
  virtual SpeakerEmbedding encode(const Waveform& x) const = 0;
  // Embedding of recording[start_s, end_s). The default slices and encodes.
  virtual SpeakerEmbedding encode_span(const Waveform& recording, double start_s,
                                       double end_s) const;
};

struct ToyEncoderConfig {
  Eigen::Index dim = 40;  // mel bands
  std::size_t window_len = 512;
  std::size_t hop = 128;
  double min_hz = 0.0;
  double max_hz = 8000.0;
  double voiced_threshold_db = -40.0;  // relative to the loudest frame
};

// Log-mel spectral envelope averaged over voiced frames, mean-removed across
// bands and L2 normalised.
class ToyEncoder final : public SpeakerEncoder {
 public:
  explicit ToyEncoder(ToyEncoderConfig cfg = {}, int sample_rate = kDefaultSampleRate);
  Eigen::Index dim() const override { return cfg_.dim; }
  // Throws std::invalid_argument("no voiced frames") on silent input.
  SpeakerEmbedding encode(const Waveform& x) const override;
  const ToyEncoderConfig& config() const { return cfg_; }

 private:
  ToyEncoderConfig cfg_;
  StftConfig stft_;
  Eigen::MatrixXd filterbank_;  // bins x dim
};

// Externally computed embeddings: a raw file of little-endian float32
// vectors (count x dim) plus a JSON sidecar
//   {"dim": E, "recording": "...", "segments": [{"start_s": a, "end_s": b}, ...]}
// Only encode_span is supported; lookups match segment times within 1 ms.
class PrecomputedEncoder final : public SpeakerEncoder {
 public:
  PrecomputedEncoder(const std::filesystem::path& vectors,
                     const std::filesystem::path& sidecar);
  Eigen::Index dim() const override { return dim_; }
  SpeakerEmbedding encode(const Waveform& x) const override;
  SpeakerEmbedding encode_span(const Waveform& recording, double start_s,
                               double end_s) const override;
  std::size_t size() const { return spans_.size(); }

 private:
  Eigen::Index dim_ = 0;
  std::vector<std::pair<double, double>> spans_;
  std::vector<SpeakerEmbedding> embeddings_;
};

struct EmbeddingSpan {
  double start_s = 0.0;
  double end_s = 0.0;
};
void write_precomputed_embeddings(const std::filesystem::path& vectors,
                                  const std::filesystem::path& sidecar,
                                  const std::string& recording,
                                  std::span<const EmbeddingSpan> spans,
                                  std::span<const SpeakerEmbedding> embeddings);

enum class SamplingVariant { kV1, kV2, kV3, kV4, kUniformMix };

std::string_view to_string(SamplingVariant v);
SamplingVariant parse_sampling_variant(std::string_view s);

struct SamplingStrategy {
  SamplingVariant variant = SamplingVariant::kV1;
  double overlap_fraction = 0.10;  // V4
  double silence_min_ms = 200.0;   // V3, per padding site
  double silence_max_ms = 1000.0;

  void validate() const;
};

struct SampledEmbedding {
  SpeakerEmbedding embedding;
  SamplingVariant used;    // concrete variant after UNIFORM_MIX resolution
  bool fell_back = false;  // V2-V4 requested but the speaker has no solo audio
};

// Concrete variant used for (seed, speaker); UNIFORM_MIX picks V1-V4 with
// equal probability, other variants map to themselves.
SamplingVariant resolve_variant(SamplingVariant v, std::uint64_t seed, std::size_t speaker);

// V1: mean of SE(clean source over each segment of the speaker).
// V2: mean of SE(mix over each non-overlapped sub-segment).
// V3: as V2 with seeded leading and/or trailing silence per sub-segment.
// V4: as V2 with each sub-segment extended by mixture audio from the
//     speaker's overlapped regions, overlap_fraction of its duration.
// UNIFORM_MIX draws one of V1-V4 uniformly from the seed.
SampledEmbedding sample_embedding(const Mixture& m, std::size_t speaker,
                                  const SamplingStrategy& s, std::uint64_t seed,
                                  const SpeakerEncoder& encoder);
SampledEmbedding sample_embedding(const Mixture& m, const std::string& speaker_id,
                                  const SamplingStrategy& s, std::uint64_t seed,
                                  const SpeakerEncoder& encoder);

}  // namespace tsep

#endif  // TSEP_EMBED_HPP_
