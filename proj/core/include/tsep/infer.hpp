// Enrollment-free inference: framed energy VAD, segment grouping and merging,
// voiced-stream concatenation, clustering-based target discovery, separation
// and re-interleaving with the removed silence.

#ifndef TSEP_INFER_HPP_
#define TSEP_INFER_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsep/cluster.hpp"
#include "tsep/embed.hpp"
#include "tsep/rttm.hpp"
#include "tsep/signal.hpp"
#include "tsep/tsnet.hpp"

namespace tsep {

inline constexpr double kVadFrameSeconds = 0.03;

struct VadFrames {
  std::vector<std::uint8_t> decisions;  // v_l
  std::size_t frame_len = 480;          // samples
  std::size_t num_samples = 0;
  int sample_rate = kDefaultSampleRate;
};

// v_l = 1 iff the RMS of frame l exceeds the whole-signal RMS by more than
// threshold_db (a trailing partial frame uses the samples it has).
VadFrames frame_vad(const Waveform& x, double threshold_db = -40.0);

// Half-open sample range [begin, end).
struct SpeechSegment {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  int sample_rate = kDefaultSampleRate;

  std::int64_t length() const { return end - begin; }
  double start_s() const { return static_cast<double>(begin) / sample_rate; }
  double end_s() const { return static_cast<double>(end) / sample_rate; }
  bool operator==(const SpeechSegment&) const = default;
};

struct SegmentRules {
  double merge_gap_s = 0.8;  // merge when the gap is strictly shorter
  double min_len_s = 0.5;    // discard merged segments strictly shorter
  double pad_s = 0.01;       // added on both sides after discarding
};

// Runs of active frames as segments, clipped to the signal.
std::vector<SpeechSegment> vad_runs(const VadFrames& v);

// Sorts, merges transitively, discards short segments and pads the
// survivors, clamped to [0, total_len]. Padded neighbours are not re-merged.
std::vector<SpeechSegment> merge_segments(std::vector<SpeechSegment> segs,
                                          std::int64_t total_len,
                                          const SegmentRules& rules = {});
std::vector<SpeechSegment> group_and_merge(const VadFrames& v,
                                           const SegmentRules& rules = {});

struct SilenceMapEntry {
  std::int64_t original_begin = 0;
  std::int64_t original_end = 0;
  std::int64_t concat_begin = 0;
};

struct SilenceMap {
  std::vector<SilenceMapEntry> entries;
  std::int64_t concat_length() const;
  // Original-time pieces of the concatenated range [begin, end).
  std::vector<SpeechSegment> to_original(std::int64_t begin, std::int64_t end,
                                         int sample_rate) const;
};

struct Concatenated {
  Waveform audio;
  SilenceMap map;
};

// Throws std::invalid_argument on unsorted, overlapping or out-of-range
// segments.
Concatenated concatenate_voiced(const Waveform& x, std::span<const SpeechSegment> segs);

std::vector<Waveform> reinterleave(std::span<const Waveform> separated,
                                   const SilenceMap& map, std::size_t total_len);

struct PipelineConfig {
  double vad_threshold_db = -40.0;
  SegmentRules rules;
  double window_s = 2.0;
  bool overlap_filter = true;
  std::optional<int> num_speakers;
  SpectralClusterConfig cluster;
  double mask_threshold = 0.5;  // mean mask over bins for speaker activity
  StftConfig stft{256, 128};
};

struct PipelineResult {
  std::vector<Waveform> speakers;  // full length, one per cluster
  DiarAnnotation diarization;
  std::vector<SpeechSegment> segments;
  SilenceMap map;
  std::vector<TimeWindow> windows;  // windows used for clustering
  ClusterAssignment clusters;
  std::vector<SpeakerEmbedding> centroids;

  // Segments, windows and clusters; no timings.
  nlohmann::json report() const;
};

// detector may be null, in which case no window is filtered.
// Throws std::runtime_error("no speakers detected") when VAD finds nothing.
PipelineResult run_pipeline(const Waveform& mix, const TsNetParams& sep,
                            const SpeakerEncoder& encoder,
                            const OverlapDetector* detector,
                            const PipelineConfig& cfg,
                            const std::string& recording = "rec");

}  // namespace tsep

#endif  // TSEP_INFER_HPP_
