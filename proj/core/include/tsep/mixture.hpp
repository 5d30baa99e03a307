// Overlapped multi-speaker mixtures with ground-truth sources, frame-level
// activity and the overlap / non-overlap sub-segment decomposition.
//
// All positions are kept in samples; the *_s() accessors convert to seconds.

#ifndef TSEP_MIXTURE_HPP_
#define TSEP_MIXTURE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tsep/rttm.hpp"
#include "tsep/signal.hpp"

namespace tsep {

struct Utterance {
  std::string speaker_id;
  std::string utterance_id;
  Waveform audio;
  std::vector<std::string> transcript;

  void validate() const;
};

// One utterance placed in a mixture: the segment U_g of its speaker.
struct Placement {
  std::size_t speaker = 0;  // index into Mixture::speakers
  std::string utterance_id;
  std::int64_t begin = 0;  // samples, inclusive
  std::int64_t end = 0;    // samples, exclusive
  int segment_index = 0;   // g, counted per speaker in time order
  double gain = 1.0;
  std::vector<std::string> transcript;
};

// Sub-segment U_{g,b}: a maximal piece of segment g over which the set of
// simultaneously active speakers is constant. b counts per speaker.
struct SegmentLabel {
  std::string speaker_id;
  std::size_t speaker = 0;
  std::int64_t begin = 0;
  std::int64_t end = 0;
  int segment_index = 0;
  int sub_index = 0;
  bool overlapped = false;
  int sample_rate = kDefaultSampleRate;

  double start_s() const { return static_cast<double>(begin) / sample_rate; }
  double end_s() const { return static_cast<double>(end) / sample_rate; }
  double duration_s() const { return end_s() - start_s(); }
};

struct ActivityConfig {
  StftConfig stft;
  double threshold_db = -40.0;
};

struct Mixture {
  Waveform mix;
  std::vector<Waveform> sources;      // y_k, same length as mix
  std::vector<std::string> speakers;  // speaker ids, index k
  std::vector<Placement> placements;  // sorted by begin
  std::vector<SegmentLabel> labels;   // sub-segment decomposition
  Eigen::MatrixXd activity;           // K x T, V_gt
  ActivityConfig activity_config;

  std::size_t num_speakers() const { return speakers.size(); }
  int sample_rate() const { return mix.sample_rate; }

  // Max |mix - sum_k sources[k]| over all samples.
  double source_sum_error() const;
  // Number of speakers active at sample n according to the placements.
  int active_count(std::int64_t n) const;
};

struct MixtureConfig {
  std::size_t num_speakers = 2;
  double max_overlap = 0.8;
  double min_len_s = 60.0;
  // When set, every adjacent pair overlaps by exactly this fraction of the
  // shorter utterance instead of a uniform draw in [0, max_overlap].
  std::optional<double> fixed_overlap;
  double target_dbfs = -23.0;
  ActivityConfig activity;
};

// Places utterances of K distinct speakers one after another; each new
// utterance starts before the end of the previous one by a fraction of the
// shorter of the two. A speaker never overlaps itself: if the drawn start
// would do so it is delayed to that speaker's last end.
Mixture synthesize_mixture(std::span<const Utterance> pool,
                           const MixtureConfig& cfg, std::uint64_t seed);

// K x T speech activity from the clean sources. Frame t covers
// [t*hop - hop/2, t*hop + hop/2); it is active when its RMS exceeds the
// source's RMS over its non-zero samples by more than threshold_db.
Eigen::MatrixXd compute_activity_labels(std::span<const Waveform> sources,
                                        const StftConfig& cfg,
                                        double threshold_db);
Eigen::MatrixXd compute_activity_labels(const Mixture& m,
                                        const StftConfig& cfg,
                                        double threshold_db);

std::vector<SegmentLabel> segment_decomposition(
    std::span<const Placement> placements,
    std::span<const std::string> speakers, int sample_rate);
std::vector<SegmentLabel> segment_decomposition(const Mixture& m);

// Contiguous slice [offset, offset + len). Placements and labels are clipped
// and shifted; activity columns are sliced when offset is hop aligned and
// recomputed otherwise.
Mixture chunk_at(const Mixture& m, std::int64_t offset, std::int64_t len);
// Random hop-aligned offset drawn from the seed.
Mixture chunk(const Mixture& m, double len_s, std::uint64_t seed);

// Reference diarization from the placements (one turn per placement).
DiarAnnotation reference_annotation(const Mixture& m,
                                    const std::string& recording);

// Manifest: source WAV paths, offsets, labels. write_mixture stores mix.wav,
// s<k>.wav, ref.rttm and manifest.json in dir. load_mixture re-derives the
// mix as the sum of the loaded sources so the source-sum identity is exact.
nlohmann::json mixture_manifest(const Mixture& m, const std::string& id);
void write_mixture(const Mixture& m, const std::filesystem::path& dir,
                   const std::string& id);
Mixture load_mixture(const std::filesystem::path& manifest_path);

}  // namespace tsep

#endif  // TSEP_MIXTURE_HPP_
