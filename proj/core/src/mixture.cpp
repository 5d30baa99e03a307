#include "tsep/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "tsep/wav_io.hpp"

namespace tsep {

void Utterance::validate() const {
  if (speaker_id.empty()) throw std::invalid_argument("utterance without speaker id");
  if (audio.empty()) {
    throw std::invalid_argument("utterance " + utterance_id + " has no audio");
  }
  audio.validate();
}

double Mixture::source_sum_error() const {
  double err = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    double s = 0.0;
    for (const auto& src : sources) s += src.samples[i];
    err = std::max(err, std::abs(mix.samples[i] - s));
  }
  return err;
}

int Mixture::active_count(std::int64_t n) const {
  std::set<std::size_t> active;
  for (const auto& p : placements) {
    if (p.begin <= n && n < p.end) active.insert(p.speaker);
  }
  return static_cast<int>(active.size());
}

Mixture synthesize_mixture(std::span<const Utterance> pool,
                           const MixtureConfig& cfg, std::uint64_t seed) {
  if (cfg.num_speakers == 0) throw std::invalid_argument("num_speakers must be >= 1");
  if (!(cfg.max_overlap >= 0.0 && cfg.max_overlap < 1.0)) {
    throw std::invalid_argument("max_overlap must lie in [0, 1)");
  }
  if (cfg.fixed_overlap && !(*cfg.fixed_overlap >= 0.0 && *cfg.fixed_overlap < 1.0)) {
    throw std::invalid_argument("fixed_overlap must lie in [0, 1)");
  }
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    pool[i].validate();
    by_speaker[pool[i].speaker_id].push_back(i);
  }
  if (by_speaker.size() < cfg.num_speakers) {
    throw std::invalid_argument(
        "pool has " + std::to_string(by_speaker.size()) +
        " distinct speakers, mixture needs " + std::to_string(cfg.num_speakers));
  }
  const int sr = pool.front().audio.sample_rate;

  std::mt19937_64 rng(seed);
  std::vector<std::string> ids;
  for (const auto& [id, _] : by_speaker) ids.push_back(id);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(cfg.num_speakers);

  Mixture m;
  m.speakers = ids;
  m.activity_config = cfg.activity;

  const auto min_len = static_cast<std::int64_t>(std::ceil(cfg.min_len_s * sr));
  const double target_rms = db_to_amplitude(cfg.target_dbfs);
  std::uniform_real_distribution<double> frac(0.0, cfg.max_overlap);
  std::vector<std::int64_t> speaker_end(cfg.num_speakers, 0);
  std::vector<int> speaker_count(cfg.num_speakers, 0);
  std::vector<const Utterance*> chosen;

  std::int64_t total = 0;
  std::size_t prev_speaker = 0;
  for (std::size_t i = 0; i < cfg.num_speakers || total < min_len; ++i) {
    std::size_t spk;
    if (i < cfg.num_speakers) {
      spk = i;
    } else if (cfg.num_speakers == 1) {
      spk = 0;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, cfg.num_speakers - 2);
      spk = pick(rng);
      if (spk >= prev_speaker) ++spk;
    }
    const auto& idx = by_speaker[ids[spk]];
    std::uniform_int_distribution<std::size_t> pick_utt(0, idx.size() - 1);
    const Utterance& u = pool[idx[pick_utt(rng)]];
    const auto len = static_cast<std::int64_t>(u.audio.size());
    const double r = rms(u.audio.samples);
    if (r <= 0.0) {
      throw std::invalid_argument("utterance " + u.utterance_id + " is silent");
    }

    Placement p;
    p.speaker = spk;
    p.utterance_id = u.utterance_id;
    p.gain = target_rms / r;
    p.transcript = u.transcript;
    if (m.placements.empty()) {
      p.begin = 0;
    } else {
      const Placement& prev = m.placements.back();
      double f = cfg.fixed_overlap ? *cfg.fixed_overlap : frac(rng);
      auto shorter = std::min(prev.end - prev.begin, len);
      auto ov = static_cast<std::int64_t>(std::llround(f * static_cast<double>(shorter)));
      p.begin = std::max(prev.end - ov, speaker_end[spk]);
    }
    p.end = p.begin + len;
    p.segment_index = speaker_count[spk]++;
    speaker_end[spk] = p.end;
    total = std::max(total, p.end);
    prev_speaker = spk;
    m.placements.push_back(p);
    chosen.push_back(&u);
  }

  m.mix = Waveform::zeros(static_cast<std::size_t>(total), sr);
  m.sources.assign(cfg.num_speakers, Waveform::zeros(static_cast<std::size_t>(total), sr));
  for (std::size_t i = 0; i < m.placements.size(); ++i) {
    const auto& p = m.placements[i];
    auto& src = m.sources[p.speaker].samples;
    const auto& audio = chosen[i]->audio.samples;
    for (std::size_t j = 0; j < audio.size(); ++j) {
      src[static_cast<std::size_t>(p.begin) + j] += p.gain * audio[j];
    }
  }
  for (const auto& src : m.sources) {
    for (std::size_t j = 0; j < src.size(); ++j) m.mix.samples[j] += src.samples[j];
  }
  std::stable_sort(m.placements.begin(), m.placements.end(),
                   [](const Placement& a, const Placement& b) { return a.begin < b.begin; });
  m.labels = segment_decomposition(m);
  m.activity = compute_activity_labels(m, cfg.activity.stft, cfg.activity.threshold_db);
  return m;
}

Eigen::MatrixXd compute_activity_labels(std::span<const Waveform> sources,
                                        const StftConfig& cfg,
                                        double threshold_db) {
  if (sources.empty()) return {};
  const std::size_t n = sources[0].size();
  const std::size_t frames = cfg.num_frames(n);
  const auto hop = static_cast<std::int64_t>(cfg.hop());
  Eigen::MatrixXd act = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sources.size()),
                                              static_cast<Eigen::Index>(frames));
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const auto& s = sources[k].samples;
    double acc = 0.0;
    std::size_t nonzero = 0;
    for (double v : s) {
      if (v != 0.0) {
        acc += v * v;
        ++nonzero;
      }
    }
    if (nonzero == 0) continue;
    const double threshold = std::sqrt(acc / nonzero) * db_to_amplitude(threshold_db);
    for (std::size_t t = 0; t < frames; ++t) {
      std::int64_t c = static_cast<std::int64_t>(t) * hop;
      std::int64_t lo = std::max<std::int64_t>(0, c - hop / 2);
      std::int64_t hi = std::min<std::int64_t>(static_cast<std::int64_t>(n), c - hop / 2 + hop);
      if (hi <= lo) continue;
      double r = rms(std::span<const double>(s.data() + lo, static_cast<std::size_t>(hi - lo)));
      if (r > threshold) act(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = 1.0;
    }
  }
  return act;
}

Eigen::MatrixXd compute_activity_labels(const Mixture& m, const StftConfig& cfg,
                                        double threshold_db) {
  return compute_activity_labels(m.sources, cfg, threshold_db);
}

std::vector<SegmentLabel> segment_decomposition(std::span<const Placement> placements,
                                                std::span<const std::string> speakers,
                                                int sample_rate) {
  auto active_set = [&](std::int64_t a, std::int64_t b) {
    // Speakers covering the whole of [a, b); pieces never straddle a boundary.
    std::set<std::size_t> s;
    for (const auto& p : placements) {
      if (p.begin <= a && b <= p.end) s.insert(p.speaker);
    }
    return s;
  };

  std::vector<std::size_t> order(placements.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return placements[a].begin < placements[b].begin;
  });

  std::vector<int> next_sub(speakers.size(), 0);
  std::vector<SegmentLabel> out;
  for (std::size_t oi : order) {
    const auto& p = placements[oi];
    if (p.end <= p.begin) continue;
    std::set<std::int64_t> cuts{p.begin, p.end};
    for (const auto& q : placements) {
      if (q.begin > p.begin && q.begin < p.end) cuts.insert(q.begin);
      if (q.end > p.begin && q.end < p.end) cuts.insert(q.end);
    }
    std::vector<std::int64_t> pts(cuts.begin(), cuts.end());
    std::int64_t piece_begin = pts[0];
    std::set<std::size_t> current = active_set(pts[0], pts[1]);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      bool last = i + 1 == pts.size();
      std::set<std::size_t> next;
      if (!last) next = active_set(pts[i], pts[i + 1]);
      if (last || next != current) {
        SegmentLabel l;
        l.speaker = p.speaker;
        l.speaker_id = speakers[p.speaker];
        l.begin = piece_begin;
        l.end = pts[i];
        l.segment_index = p.segment_index;
        l.sub_index = next_sub[p.speaker]++;
        l.overlapped = current.size() >= 2;
        l.sample_rate = sample_rate;
        out.push_back(l);
        piece_begin = pts[i];
        current = next;
      }
    }
  }
  return out;
}

std::vector<SegmentLabel> segment_decomposition(const Mixture& m) {
  return segment_decomposition(m.placements, m.speakers, m.sample_rate());
}

Mixture chunk_at(const Mixture& m, std::int64_t offset, std::int64_t len) {
  const auto total = static_cast<std::int64_t>(m.mix.size());
  if (len <= 0 || offset < 0 || offset + len > total) {
    throw std::invalid_argument("chunk [" + std::to_string(offset) + ", " +
                                std::to_string(offset + len) +
                                ") exceeds mixture of " + std::to_string(total) +
                                " samples");
  }
  Mixture c;
  c.speakers = m.speakers;
  c.activity_config = m.activity_config;
  auto b = static_cast<std::size_t>(offset), e = static_cast<std::size_t>(offset + len);
  c.mix = m.mix.slice(b, e);
  for (const auto& s : m.sources) c.sources.push_back(s.slice(b, e));
  for (auto p : m.placements) {
    p.begin = std::max<std::int64_t>(p.begin - offset, 0);
    p.end = std::min<std::int64_t>(p.end - offset, len);
    if (p.end > p.begin) c.placements.push_back(p);
  }
  for (auto l : m.labels) {
    l.begin = std::max<std::int64_t>(l.begin - offset, 0);
    l.end = std::min<std::int64_t>(l.end - offset, len);
    if (l.end > l.begin) c.labels.push_back(l);
  }
  const auto& cfg = m.activity_config.stft;
  const auto hop = static_cast<std::int64_t>(cfg.hop());
  const auto frames = static_cast<Eigen::Index>(cfg.num_frames(static_cast<std::size_t>(len)));
  if (offset % hop == 0 && m.activity.size() > 0 &&
      offset / hop + frames <= m.activity.cols()) {
    c.activity = m.activity.middleCols(offset / hop, frames);
  } else {
    c.activity = compute_activity_labels(c, cfg, m.activity_config.threshold_db);
  }
  return c;
}

Mixture chunk(const Mixture& m, double len_s, std::uint64_t seed) {
  const auto len = static_cast<std::int64_t>(std::llround(len_s * m.sample_rate()));
  const auto total = static_cast<std::int64_t>(m.mix.size());
  if (len > total) {
    throw std::invalid_argument("mixture of " + std::to_string(m.mix.duration_s()) +
                                " s is shorter than chunk of " + std::to_string(len_s) + " s");
  }
  const auto hop = static_cast<std::int64_t>(m.activity_config.stft.hop());
  const std::int64_t slots = (total - len) / hop;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, slots);
  return chunk_at(m, pick(rng) * hop, len);
}

DiarAnnotation reference_annotation(const Mixture& m, const std::string& recording) {
  DiarAnnotation a;
  a.recording = recording;
  const double sr = m.sample_rate();
  for (const auto& p : m.placements) {
    a.turns.push_back({m.speakers[p.speaker], p.begin / sr, p.end / sr});
  }
  return a;
}

namespace {

nlohmann::json stft_json(const StftConfig& c) {
  return {{"window_len", c.window_len()}, {"hop", c.hop()}};
}

}  // namespace

nlohmann::json mixture_manifest(const Mixture& m, const std::string& id) {
  nlohmann::json j;
  j["id"] = id;
  j["sample_rate"] = m.sample_rate();
  j["num_samples"] = m.mix.size();
  j["mix"] = "mix.wav";
  j["speakers"] = m.speakers;
  j["sources"] = nlohmann::json::array();
  for (std::size_t k = 0; k < m.sources.size(); ++k) {
    j["sources"].push_back("s" + std::to_string(k) + ".wav");
  }
  j["activity"] = {{"stft", stft_json(m.activity_config.stft)},
                   {"threshold_db", m.activity_config.threshold_db}};
  j["placements"] = nlohmann::json::array();
  for (const auto& p : m.placements) {
    j["placements"].push_back({{"speaker", m.speakers[p.speaker]},
                               {"utterance", p.utterance_id},
                               {"begin", p.begin},
                               {"end", p.end},
                               {"offset_s", static_cast<double>(p.begin) / m.sample_rate()},
                               {"segment_index", p.segment_index},
                               {"gain", p.gain},
                               {"transcript", p.transcript}});
  }
  j["labels"] = nlohmann::json::array();
  for (const auto& l : m.labels) {
    j["labels"].push_back({{"speaker", l.speaker_id},
                           {"begin", l.begin},
                           {"end", l.end},
                           {"start_s", l.start_s()},
                           {"end_s", l.end_s()},
                           {"g", l.segment_index},
                           {"b", l.sub_index},
                           {"overlapped", l.overlapped}});
  }
  return j;
}

void write_mixture(const Mixture& m, const std::filesystem::path& dir,
                   const std::string& id) {
  std::filesystem::create_directories(dir);
  write_wav(dir / "mix.wav", m.mix);
  for (std::size_t k = 0; k < m.sources.size(); ++k) {
    write_wav(dir / ("s" + std::to_string(k) + ".wav"), m.sources[k]);
  }
  write_rttm(dir / "ref.rttm", reference_annotation(m, id));
  std::ofstream out(dir / "manifest.json");
  out << mixture_manifest(m, id).dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
}

Mixture load_mixture(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  const auto dir = manifest_path.parent_path();
  Mixture m;
  m.speakers = j.at("speakers").get<std::vector<std::string>>();
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < m.speakers.size(); ++k) index[m.speakers[k]] = k;
  for (const auto& s : j.at("sources")) {
    m.sources.push_back(read_wav(dir / s.get<std::string>()));
  }
  if (m.sources.size() != m.speakers.size()) {
    throw std::runtime_error(manifest_path.string() + ": source/speaker count mismatch");
  }
  const std::size_t n = m.sources.empty() ? 0 : m.sources[0].size();
  m.mix = Waveform::zeros(n, j.at("sample_rate").get<int>());
  for (const auto& s : m.sources) {
    if (s.size() != n) throw std::runtime_error("sources differ in length");
    for (std::size_t i = 0; i < n; ++i) m.mix.samples[i] += s.samples[i];
  }
  const auto& a = j.at("activity");
  m.activity_config.stft = StftConfig(a.at("stft").at("window_len").get<std::size_t>(),
                                      a.at("stft").at("hop").get<std::size_t>());
  m.activity_config.threshold_db = a.at("threshold_db").get<double>();
  for (const auto& p : j.at("placements")) {
    Placement pl;
    pl.speaker = index.at(p.at("speaker").get<std::string>());
    pl.utterance_id = p.at("utterance").get<std::string>();
    pl.begin = p.at("begin").get<std::int64_t>();
    pl.end = p.at("end").get<std::int64_t>();
    pl.segment_index = p.at("segment_index").get<int>();
    pl.gain = p.at("gain").get<double>();
    pl.transcript = p.value("transcript", std::vector<std::string>{});
    m.placements.push_back(pl);
  }
  for (const auto& l : j.at("labels")) {
    SegmentLabel sl;
    sl.speaker_id = l.at("speaker").get<std::string>();
    sl.speaker = index.at(sl.speaker_id);
    sl.begin = l.at("begin").get<std::int64_t>();
    sl.end = l.at("end").get<std::int64_t>();
    sl.segment_index = l.at("g").get<int>();
    sl.sub_index = l.at("b").get<int>();
    sl.overlapped = l.at("overlapped").get<bool>();
    sl.sample_rate = m.mix.sample_rate;
    m.labels.push_back(sl);
  }
  m.activity = compute_activity_labels(m, m.activity_config.stft,
                                       m.activity_config.threshold_db);
  return m;
}

}  // namespace tsep
