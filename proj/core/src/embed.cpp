#include "tsep/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "tsep/log.hpp"
#include "tsep/random.hpp"

namespace tsep {

namespace {

constexpr double kDegenerateNorm = 1e-12;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

SpeakerEmbedding SpeakerEmbedding::normalized(const Eigen::VectorXd& raw) {
  if (raw.size() == 0) throw std::invalid_argument("degenerate embedding: empty vector");
  if (!raw.allFinite()) throw std::invalid_argument("degenerate embedding: non-finite values");
  const double n = raw.norm();
  if (n < kDegenerateNorm) throw std::invalid_argument("degenerate mean: zero vector");
  return SpeakerEmbedding(raw / n);
}

SpeakerEmbedding mean_embed(std::span<const SpeakerEmbedding> es) {
  if (es.empty()) throw std::invalid_argument("mean_embed: empty list");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(es[0].dim());
  for (const auto& e : es) {
    if (e.dim() != acc.size()) throw std::invalid_argument("mean_embed: dimension mismatch");
    acc += e.values();
  }
  acc /= static_cast<double>(es.size());
  if (acc.norm() < kDegenerateNorm) {
    throw std::invalid_argument("degenerate mean: embeddings cancel out");
  }
  return SpeakerEmbedding::normalized(acc);
}

SpeakerEmbedding SpeakerEncoder::encode_span(const Waveform& recording, double start_s,
                                             double end_s) const {
  const double sr = recording.sample_rate;
  auto b = static_cast<std::size_t>(std::max(0.0, std::round(start_s * sr)));
  auto e = static_cast<std::size_t>(std::max(0.0, std::round(end_s * sr)));
  return encode(recording.slice(b, e));
}

ToyEncoder::ToyEncoder(ToyEncoderConfig cfg, int sample_rate)
    : cfg_(cfg), stft_(cfg.window_len, cfg.hop) {
  if (cfg_.dim < 2) throw std::invalid_argument("toy encoder needs dim >= 2");
  const auto bins = static_cast<Eigen::Index>(stft_.num_bins());
  filterbank_ = Eigen::MatrixXd::Zero(bins, cfg_.dim);
  const double lo = hz_to_mel(cfg_.min_hz), hi = hz_to_mel(cfg_.max_hz);
  std::vector<double> edges(static_cast<std::size_t>(cfg_.dim) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (edges.size() - 1));
  }
  for (Eigen::Index f = 0; f < bins; ++f) {
    const double hz = static_cast<double>(f) * sample_rate / static_cast<double>(cfg_.window_len);
    for (Eigen::Index m = 0; m < cfg_.dim; ++m) {
      const double l = edges[m], c = edges[m + 1], r = edges[m + 2];
      double w = 0.0;
      if (hz > l && hz <= c) w = (hz - l) / (c - l);
      else if (hz > c && hz < r) w = (r - hz) / (r - c);
      filterbank_(f, m) = w;
    }
  }
}

SpeakerEmbedding ToyEncoder::encode(const Waveform& x) const {
  if (x.empty()) throw std::invalid_argument("no voiced frames: empty input");
  const Spectrogram s = stft(x, stft_);
  const Eigen::MatrixXd power = s.bins.cwiseAbs2();
  const Eigen::VectorXd energy = power.rowwise().sum();
  const double peak = energy.maxCoeff();
  // Absolute floor near -100 dBFS for a full window.
  const double abs_floor = 1e-10 * static_cast<double>(cfg_.window_len);
  const double rel_floor = peak * std::pow(10.0, cfg_.voiced_threshold_db / 10.0);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(cfg_.dim);
  int voiced = 0;
  for (Eigen::Index t = 0; t < power.rows(); ++t) {
    if (energy(t) <= abs_floor || energy(t) < rel_floor) continue;
    Eigen::RowVectorXd mel = power.row(t) * filterbank_;
    acc += (mel.array() + 1e-10).log10().matrix().transpose();
    ++voiced;
  }
  if (voiced == 0) throw std::invalid_argument("no voiced frames");
  acc /= voiced;
  acc.array() -= acc.mean();
  return SpeakerEmbedding::normalized(acc);
}

PrecomputedEncoder::PrecomputedEncoder(const std::filesystem::path& vectors,
                                       const std::filesystem::path& sidecar) {
  std::ifstream js(sidecar);
  if (!js) throw std::runtime_error("cannot open " + sidecar.string());
  const auto meta = nlohmann::json::parse(js);
  dim_ = meta.at("dim").get<Eigen::Index>();
  if (dim_ <= 0) throw std::runtime_error(sidecar.string() + ": dim must be positive");
  for (const auto& seg : meta.at("segments")) {
    spans_.emplace_back(seg.at("start_s").get<double>(), seg.at("end_s").get<double>());
  }
  std::ifstream in(vectors, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + vectors.string());
  std::vector<unsigned char> raw(static_cast<std::size_t>(dim_) * 4);
  for (std::size_t i = 0; i < spans_.size(); ++i) {
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      throw std::runtime_error(vectors.string() + ": expected " + std::to_string(spans_.size()) +
                               " vectors of dim " + std::to_string(dim_));
    }
    Eigen::VectorXd v(dim_);
    for (Eigen::Index d = 0; d < dim_; ++d) {
      const unsigned char* p = raw.data() + 4 * d;
      std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                           (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      v(d) = f;
    }
    embeddings_.push_back(SpeakerEmbedding::normalized(v));
  }
}

SpeakerEmbedding PrecomputedEncoder::encode(const Waveform&) const {
  throw std::logic_error("precomputed embeddings are addressed by time span");
}

SpeakerEmbedding PrecomputedEncoder::encode_span(const Waveform&, double start_s,
                                                 double end_s) const {
  for (std::size_t i = 0; i < spans_.size(); ++i) {
    if (std::abs(spans_[i].first - start_s) < 1e-3 && std::abs(spans_[i].second - end_s) < 1e-3) {
      return embeddings_[i];
    }
  }
  throw std::out_of_range("no precomputed embedding for span [" + std::to_string(start_s) +
                          ", " + std::to_string(end_s) + ")");
}

void write_precomputed_embeddings(const std::filesystem::path& vectors,
                                  const std::filesystem::path& sidecar,
                                  const std::string& recording,
                                  std::span<const EmbeddingSpan> spans,
                                  std::span<const SpeakerEmbedding> embeddings) {
  if (spans.size() != embeddings.size() || embeddings.empty()) {
    throw std::invalid_argument("write_precomputed_embeddings: size mismatch");
  }
  const Eigen::Index dim = embeddings[0].dim();
  std::ofstream out(vectors, std::ios::binary);
  for (const auto& e : embeddings) {
    if (e.dim() != dim) throw std::invalid_argument("mixed embedding dims");
    for (Eigen::Index d = 0; d < dim; ++d) {
      float f = static_cast<float>(e.values()(d));
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b) out.put(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  nlohmann::json meta{{"dim", dim}, {"recording", recording}, {"segments", nlohmann::json::array()}};
  for (const auto& s : spans) meta["segments"].push_back({{"start_s", s.start_s}, {"end_s", s.end_s}});
  std::ofstream(sidecar) << meta.dump(2) << '\n';
}

std::string_view to_string(SamplingVariant v) {
  switch (v) {
    case SamplingVariant::kV1: return "V1";
    case SamplingVariant::kV2: return "V2";
    case SamplingVariant::kV3: return "V3";
    case SamplingVariant::kV4: return "V4";
    case SamplingVariant::kUniformMix: return "UNIFORM_MIX";
  }
  return "?";
}

SamplingVariant parse_sampling_variant(std::string_view s) {
  if (s == "V1" || s == "v1") return SamplingVariant::kV1;
  if (s == "V2" || s == "v2") return SamplingVariant::kV2;
  if (s == "V3" || s == "v3") return SamplingVariant::kV3;
  if (s == "V4" || s == "v4") return SamplingVariant::kV4;
  if (s == "UNIFORM_MIX" || s == "uniform_mix" || s == "V1V2V3V4" || s == "v1v2v3v4") {
    return SamplingVariant::kUniformMix;
  }
  throw std::invalid_argument("unknown sampling variant '" + std::string(s) + "'");
}

void SamplingStrategy::validate() const {
  if (!(overlap_fraction >= 0.0 && overlap_fraction <= 0.5)) {
    throw std::invalid_argument("overlap_fraction must lie in [0, 0.5]");
  }
  if (!(silence_min_ms >= 0.0 && silence_max_ms >= silence_min_ms)) {
    throw std::invalid_argument("silence range must satisfy 0 <= min <= max");
  }
}

namespace {

Waveform concat(std::initializer_list<const Waveform*> parts, int sr) {
  Waveform out = Waveform::zeros(0, sr);
  for (const auto* p : parts) out.samples.insert(out.samples.end(), p->samples.begin(), p->samples.end());
  return out;
}

SpeakerEmbedding oracle_embedding(const Mixture& m, std::size_t k, const SpeakerEncoder& enc) {
  std::vector<SpeakerEmbedding> es;
  for (const auto& p : m.placements) {
    if (p.speaker != k) continue;
    es.push_back(enc.encode(m.sources[k].slice(static_cast<std::size_t>(p.begin),
                                               static_cast<std::size_t>(p.end))));
  }
  if (es.empty()) {
    throw std::invalid_argument("speaker " + m.speakers[k] + " has no segments in the mixture");
  }
  return mean_embed(es);
}

// Mixture audio adjacent to (or taken from) the speaker's overlapped
// regions, `want` samples long at most. Returns {audio, prepend}.
std::pair<Waveform, bool> overlap_extension(const Mixture& m, const SegmentLabel& solo,
                                            std::int64_t want, std::mt19937_64& rng) {
  const SegmentLabel* after = nullptr;
  const SegmentLabel* before = nullptr;
  const SegmentLabel* nearest = nullptr;
  std::int64_t best = INT64_MAX;
  for (const auto& l : m.labels) {
    if (l.speaker != solo.speaker || !l.overlapped) continue;
    if (l.begin == solo.end) after = &l;
    if (l.end == solo.begin) before = &l;
    std::int64_t dist = l.begin >= solo.end ? l.begin - solo.end : solo.begin - l.end;
    if (dist >= 0 && dist < best) {
      best = dist;
      nearest = &l;
    }
  }
  const auto n = [](std::int64_t v) { return static_cast<std::size_t>(v); };
  if (after && before) {
    if (std::bernoulli_distribution(0.5)(rng)) before = nullptr;
    else after = nullptr;
  }
  if (after) {
    return {m.mix.slice(n(after->begin), n(std::min(after->end, after->begin + want))), false};
  }
  if (before) {
    return {m.mix.slice(n(std::max(before->begin, before->end - want)), n(before->end)), true};
  }
  if (nearest) {
    return {m.mix.slice(n(nearest->begin), n(std::min(nearest->end, nearest->begin + want))),
            nearest->end <= solo.begin};
  }
  return {Waveform::zeros(0, m.sample_rate()), false};
}

}  // namespace

SamplingVariant resolve_variant(SamplingVariant v, std::uint64_t seed, std::size_t speaker) {
  if (v != SamplingVariant::kUniformMix) return v;
  std::mt19937_64 rng(derive_seed(seed, {speaker, 0}));
  return static_cast<SamplingVariant>(std::uniform_int_distribution<int>(0, 3)(rng));
}

SampledEmbedding sample_embedding(const Mixture& m, std::size_t k, const SamplingStrategy& s,
                                  std::uint64_t seed, const SpeakerEncoder& encoder) {
  s.validate();
  if (k >= m.num_speakers()) {
    throw std::invalid_argument("unknown speaker index " + std::to_string(k));
  }
  std::mt19937_64 rng(derive_seed(seed, {k, 1}));
  const SamplingVariant v = resolve_variant(s.variant, seed, k);
  if (v == SamplingVariant::kV1) return {oracle_embedding(m, k, encoder), v, false};

  std::vector<const SegmentLabel*> solo;
  for (const auto& l : m.labels) {
    if (l.speaker == k && !l.overlapped && l.end > l.begin) solo.push_back(&l);
  }
  if (solo.empty()) {
    log::warn("embedding_fallback", {{"speaker", m.speakers[k]},
                                     {"requested", std::string(to_string(v))},
                                     {"reason", "no non-overlapped sub-segments"}});
    return {oracle_embedding(m, k, encoder), v, true};
  }

  const int sr = m.sample_rate();
  std::uniform_real_distribution<double> silence_ms(s.silence_min_ms, s.silence_max_ms);
  std::vector<SpeakerEmbedding> es;
  std::int64_t appended = 0, budget = 0;
  for (const auto* l : solo) {
    Waveform seg = m.mix.slice(static_cast<std::size_t>(l->begin), static_cast<std::size_t>(l->end));
    if (v == SamplingVariant::kV3) {
      const int pattern = std::uniform_int_distribution<int>(0, 2)(rng);  // lead, trail, both
      auto silence = [&] {
        return Waveform::zeros(static_cast<std::size_t>(std::llround(silence_ms(rng) * sr / 1000.0)), sr);
      };
      Waveform lead = pattern != 1 ? silence() : Waveform::zeros(0, sr);
      Waveform trail = pattern != 0 ? silence() : Waveform::zeros(0, sr);
      seg = concat({&lead, &seg, &trail}, sr);
    } else if (v == SamplingVariant::kV4) {
      const auto want = static_cast<std::int64_t>(
          std::llround(s.overlap_fraction * static_cast<double>(l->end - l->begin)));
      budget += want;
      if (want > 0) {
        auto [ext, prepend] = overlap_extension(m, *l, want, rng);
        appended += static_cast<std::int64_t>(ext.size());
        seg = prepend ? concat({&ext, &seg}, sr) : concat({&seg, &ext}, sr);
      }
    }
    es.push_back(encoder.encode(seg));
  }
  if (v == SamplingVariant::kV4) {
    log::debug("v4_overlap_dose", {{"speaker", m.speakers[k]},
                                   {"requested_samples", budget},
                                   {"appended_samples", appended}});
  }
  return {mean_embed(es), v, false};
}

SampledEmbedding sample_embedding(const Mixture& m, const std::string& speaker_id,
                                  const SamplingStrategy& s, std::uint64_t seed,
                                  const SpeakerEncoder& encoder) {
  auto it = std::find(m.speakers.begin(), m.speakers.end(), speaker_id);
  if (it == m.speakers.end()) throw std::invalid_argument("unknown speaker '" + speaker_id + "'");
  return sample_embedding(m, static_cast<std::size_t>(it - m.speakers.begin()), s, seed, encoder);
}

}  // namespace tsep
