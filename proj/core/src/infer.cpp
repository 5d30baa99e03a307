#include "tsep/infer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tsep/log.hpp"

namespace tsep {

namespace {

std::int64_t to_samples(double s, int sr) { return std::llround(s * sr); }

// Frame t of a centred STFT covers [t*hop - hop/2, t*hop + hop/2).
std::vector<std::pair<std::int64_t, std::int64_t>> active_runs(
    const Eigen::VectorXd& score, double threshold, std::int64_t hop, std::int64_t len) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  const Eigen::Index T = score.size();
  for (Eigen::Index t = 0; t < T;) {
    if (!(score(t) > threshold)) {
      ++t;
      continue;
    }
    Eigen::Index u = t;
    while (u < T && score(u) > threshold) ++u;
    const std::int64_t b = std::max<std::int64_t>(0, t * hop - hop / 2);
    const std::int64_t e = std::min<std::int64_t>(len, u * hop - hop / 2);
    if (e > b) out.emplace_back(b, e);
    t = u;
  }
  return out;
}

}  // namespace

VadFrames frame_vad(const Waveform& x, double threshold_db) {
  x.validate();
  VadFrames v;
  v.sample_rate = x.sample_rate;
  v.frame_len = static_cast<std::size_t>(std::llround(kVadFrameSeconds * x.sample_rate));
  v.num_samples = x.size();
  const std::size_t n = (x.size() + v.frame_len - 1) / v.frame_len;
  v.decisions.assign(n, 0);
  const double level = rms(x.samples);
  if (level <= 0.0) return v;
  const double thr = level * db_to_amplitude(threshold_db);
  for (std::size_t l = 0; l < n; ++l) {
    const std::size_t b = l * v.frame_len;
    const std::size_t e = std::min(x.size(), b + v.frame_len);
    v.decisions[l] = rms(std::span(x.samples).subspan(b, e - b)) > thr;
  }
  return v;
}

std::vector<SpeechSegment> vad_runs(const VadFrames& v) {
  std::vector<SpeechSegment> out;
  const auto fl = static_cast<std::int64_t>(v.frame_len);
  const auto len = static_cast<std::int64_t>(v.num_samples);
  for (std::size_t l = 0; l < v.decisions.size();) {
    if (!v.decisions[l]) {
      ++l;
      continue;
    }
    std::size_t u = l;
    while (u < v.decisions.size() && v.decisions[u]) ++u;
    out.push_back({static_cast<std::int64_t>(l) * fl,
                   std::min(len, static_cast<std::int64_t>(u) * fl), v.sample_rate});
    l = u;
  }
  return out;
}

std::vector<SpeechSegment> merge_segments(std::vector<SpeechSegment> segs,
                                          std::int64_t total_len,
                                          const SegmentRules& rules) {
  if (segs.empty()) return segs;
  const int sr = segs.front().sample_rate;
  const std::int64_t gap = to_samples(rules.merge_gap_s, sr);
  const std::int64_t min_len = to_samples(rules.min_len_s, sr);
  const std::int64_t pad = to_samples(rules.pad_s, sr);
  std::sort(segs.begin(), segs.end(), [](const SpeechSegment& a, const SpeechSegment& b) {
    return a.begin < b.begin || (a.begin == b.begin && a.end < b.end);
  });
  std::vector<SpeechSegment> merged;
  for (const auto& s : segs) {
    if (s.end <= s.begin) continue;
    if (!merged.empty() && s.begin - merged.back().end < gap) {
      merged.back().end = std::max(merged.back().end, s.end);
    } else {
      merged.push_back(s);
    }
  }
  std::vector<SpeechSegment> out;
  for (auto s : merged) {
    if (s.length() < min_len) continue;
    s.begin = std::max<std::int64_t>(0, s.begin - pad);
    s.end = std::min<std::int64_t>(total_len, s.end + pad);
    out.push_back(s);
  }
  return out;
}

std::vector<SpeechSegment> group_and_merge(const VadFrames& v, const SegmentRules& rules) {
  return merge_segments(vad_runs(v), static_cast<std::int64_t>(v.num_samples), rules);
}

std::int64_t SilenceMap::concat_length() const {
  if (entries.empty()) return 0;
  const auto& e = entries.back();
  return e.concat_begin + (e.original_end - e.original_begin);
}

std::vector<SpeechSegment> SilenceMap::to_original(std::int64_t begin, std::int64_t end,
                                                   int sample_rate) const {
  std::vector<SpeechSegment> out;
  for (const auto& e : entries) {
    const std::int64_t cb = e.concat_begin;
    const std::int64_t ce = cb + (e.original_end - e.original_begin);
    const std::int64_t b = std::max(begin, cb), en = std::min(end, ce);
    if (en > b) {
      out.push_back({e.original_begin + (b - cb), e.original_begin + (en - cb), sample_rate});
    }
  }
  return out;
}

Concatenated concatenate_voiced(const Waveform& x, std::span<const SpeechSegment> segs) {
  Concatenated c;
  c.audio.sample_rate = x.sample_rate;
  std::int64_t prev_end = 0;
  for (const auto& s : segs) {
    if (s.begin < prev_end) {
      throw std::invalid_argument("concatenate_voiced: segments overlap or are unsorted");
    }
    if (s.end <= s.begin || s.end > static_cast<std::int64_t>(x.size())) {
      throw std::invalid_argument("concatenate_voiced: segment outside the signal");
    }
    c.map.entries.push_back({s.begin, s.end, static_cast<std::int64_t>(c.audio.size())});
    c.audio.samples.insert(c.audio.samples.end(), x.samples.begin() + s.begin,
                           x.samples.begin() + s.end);
    prev_end = s.end;
  }
  return c;
}

std::vector<Waveform> reinterleave(std::span<const Waveform> separated,
                                   const SilenceMap& map, std::size_t total_len) {
  std::vector<Waveform> out;
  for (const auto& s : separated) {
    if (static_cast<std::int64_t>(s.size()) != map.concat_length()) {
      throw std::invalid_argument("reinterleave: separated length " + std::to_string(s.size()) +
                                  " does not match the map (" +
                                  std::to_string(map.concat_length()) + ")");
    }
    Waveform w = Waveform::zeros(total_len, s.sample_rate);
    for (const auto& e : map.entries) {
      if (e.original_end > static_cast<std::int64_t>(total_len)) {
        throw std::invalid_argument("reinterleave: map exceeds the output length");
      }
      std::copy_n(s.samples.begin() + e.concat_begin, e.original_end - e.original_begin,
                  w.samples.begin() + e.original_begin);
    }
    out.push_back(std::move(w));
  }
  return out;
}

nlohmann::json PipelineResult::report() const {
  nlohmann::json j;
  auto& segs = j["segments"] = nlohmann::json::array();
  for (const auto& s : segments) {
    segs.push_back({{"start_s", s.start_s()}, {"end_s", s.end_s()}});
  }
  j["clusters"] = cluster_report(windows, clusters);
  j["num_speakers"] = speakers.size();
  return j;
}

PipelineResult run_pipeline(const Waveform& mix, const TsNetParams& sep,
                            const SpeakerEncoder& encoder,
                            const OverlapDetector* detector,
                            const PipelineConfig& cfg, const std::string& recording) {
  if (sep.head() != HeadKind::kMask) {
    throw std::invalid_argument("run_pipeline needs a separation (mask head) network");
  }
  if (static_cast<Eigen::Index>(cfg.stft.num_bins()) != sep.dims().F) {
    throw std::invalid_argument("pipeline STFT has " + std::to_string(cfg.stft.num_bins()) +
                                " bins but the network expects " +
                                std::to_string(sep.dims().F));
  }
  if (encoder.dim() != sep.dims().E) {
    throw std::invalid_argument("encoder dimension does not match the network");
  }
  PipelineResult res;
  const int sr = mix.sample_rate;
  res.segments = group_and_merge(frame_vad(mix, cfg.vad_threshold_db), cfg.rules);
  if (res.segments.empty()) throw std::runtime_error("no speakers detected");
  auto cat = concatenate_voiced(mix, res.segments);
  res.map = cat.map;

  // Windows never straddle a VAD segment.
  std::vector<TimeWindow> windows;
  for (const auto& s : res.segments) {
    auto w = extract_windows(s.end_s() - s.start_s(), cfg.window_s, 1.0, s.start_s());
    windows.insert(windows.end(), w.begin(), w.end());
  }
  if (windows.empty()) {
    for (const auto& s : res.segments) windows.push_back({s.start_s(), s.end_s()});
  }
  if (detector && cfg.overlap_filter) {
    auto kept = overlap_filter(windows, *detector);
    if (kept.size() >= 2 || (kept.size() == 1 && windows.size() == 1)) {
      windows = std::move(kept);
    } else {
      log::warn("overlap_filter_fallback",
                {{"windows", windows.size()}, {"kept", kept.size()}});
    }
  }
  res.windows = windows;
  std::vector<SpeakerEmbedding> es;
  for (const auto& w : windows) es.push_back(encoder.encode_span(mix, w.start_s, w.end_s));

  if (es.size() >= 2) {
    res.clusters = spectral_cluster(es, cfg.num_speakers, cfg.cluster);
  } else {
    res.clusters.labels.assign(es.size(), 0);
    res.clusters.k_est = 1;
  }
  res.centroids = cluster_centroids(es, res.clusters);
  if (res.centroids.empty()) throw std::runtime_error("no speakers detected");
  if (static_cast<Eigen::Index>(res.centroids.size()) > sep.dims().K_max) {
    throw std::runtime_error("found " + std::to_string(res.centroids.size()) +
                             " speakers, more than the network supports");
  }

  const Spectrogram spec = stft(cat.audio, cfg.stft);
  const auto masks = forward_sep(sep, log_magnitude_features(spec), res.centroids);
  std::vector<Waveform> separated;
  for (const auto& m : masks) separated.push_back(istft(apply_mask(Mask(m), spec)));
  res.speakers = reinterleave(separated, res.map, mix.size());

  res.diarization.recording = recording;
  const auto hop = static_cast<std::int64_t>(cfg.stft.hop());
  for (std::size_t k = 0; k < masks.size(); ++k) {
    Eigen::VectorXd score = masks[k].rowwise().mean();
    std::vector<SpeechSegment> pieces;
    for (auto [b, e] : active_runs(score, cfg.mask_threshold, hop,
                                   static_cast<std::int64_t>(cat.audio.size()))) {
      auto orig = res.map.to_original(b, e, sr);
      pieces.insert(pieces.end(), orig.begin(), orig.end());
    }
    for (const auto& s : merge_segments(pieces, static_cast<std::int64_t>(mix.size()), cfg.rules)) {
      res.diarization.turns.push_back({"spk" + std::to_string(k), s.start_s(), s.end_s()});
    }
  }
  std::sort(res.diarization.turns.begin(), res.diarization.turns.end(),
            [](const SpeakerTurn& a, const SpeakerTurn& b) {
              return a.start_s < b.start_s || (a.start_s == b.start_s && a.speaker < b.speaker);
            });
  return res;
}

}  // namespace tsep
