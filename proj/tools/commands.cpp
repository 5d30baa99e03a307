#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>

#include "tsep/cluster.hpp"
#include "tsep/dataset.hpp"
#include "tsep/infer.hpp"
#include "tsep/log.hpp"
#include "tsep/metrics.hpp"
#include "tsep/random.hpp"
#include "tsep/toy_corpus.hpp"
#include "tsep/train.hpp"
#include "tsep/wav_io.hpp"
#include "tsep/assignment.hpp"

namespace tsep::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Chi-square critical value, 3 degrees of freedom, p = 0.001.
constexpr double kChiSquare3 = 16.266;

std::string mixture_id(const char* prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
  return buf;
}

void merge_strict(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : patch.items()) {
    auto it = base.find(key);
    if (it == base.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (it->is_object() && value.is_object()) {
      merge_strict(*it, value, where + "." + key);
    } else if (it->is_object()) {
      throw ConfigError(where + "." + key + ": expected an object");
    } else {
      *it = value;
    }
  }
}

std::string absolute_path(const std::string& p) {
  return fs::absolute(fs::path(p)).lexically_normal().string();
}

const json& require(const json& cfg, const char* key, const char* command) {
  const auto it = cfg.find(key);
  if (it == cfg.end() || it->is_null()) {
    throw ConfigError(std::string(command) + ": missing required '" + key + "'");
  }
  return *it;
}

fs::path existing(const json& v, const char* what) {
  const fs::path p = v.get<std::string>();
  if (!fs::exists(p)) throw std::runtime_error(std::string(what) + " not found: " + p.string());
  return p;
}

StftConfig stft_from(const json& j) {
  return StftConfig(j.at("window").get<std::size_t>(), j.at("hop").get<std::size_t>());
}

json stft_to_json(const StftConfig& s) { return {{"window", s.window_len()}, {"hop", s.hop()}}; }

ToyEncoder make_encoder(const json& enc) {
  ToyEncoderConfig c;
  c.dim = enc.at("dim").get<Eigen::Index>();
  if (c.dim < 2) throw ConfigError("encoder.dim must be at least 2");
  return ToyEncoder(c);
}

// Lines that go to both the log file and stderr.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    const int r1 = a_->sputc(static_cast<char>(c));
    const int r2 = b_->sputc(static_cast<char>(c));
    return (r1 == EOF || r2 == EOF) ? EOF : c;
  }
  int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

struct Corpus {
  fs::path root;
  StftConfig stft;
  double activity_threshold_db = -40.0;
  std::vector<fs::path> train;
  std::vector<fs::path> eval;
};

Corpus read_corpus(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("corpus not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  Corpus c;
  c.root = path.parent_path();
  c.stft = stft_from(j.at("stft"));
  c.activity_threshold_db = j.at("activity_threshold_db").get<double>();
  for (const auto& p : j.at("train")) c.train.push_back(c.root / p.get<std::string>());
  for (const auto& p : j.at("eval")) c.eval.push_back(c.root / p.get<std::string>());
  return c;
}

void add_mixture_inputs(Manifest& m, const std::vector<fs::path>& manifests) {
  for (const auto& p : manifests) {
    for (const auto& e : fs::directory_iterator(p.parent_path())) {
      if (e.is_regular_file()) m.add_input(e.path());
    }
  }
}

std::vector<Mixture> load_all(const std::vector<fs::path>& paths) {
  std::vector<Mixture> out(paths.size());
  parallel_for(paths.size(), [&](std::size_t i) { out[i] = load_mixture(paths[i]); });
  return out;
}

// Largest overlap between time-adjacent utterances as a fraction of the
// shorter one.
double max_adjacent_overlap(const Mixture& m) {
  double worst = 0.0;
  for (std::size_t i = 1; i < m.placements.size(); ++i) {
    const auto& a = m.placements[i - 1];
    const auto& b = m.placements[i];
    const double shorter = static_cast<double>(std::min(a.end - a.begin, b.end - b.begin));
    const double ov = static_cast<double>(std::max<std::int64_t>(0, a.end - b.begin));
    if (shorter > 0) worst = std::max(worst, ov / shorter);
  }
  return worst;
}

void write_transcripts(const Mixture& m, const fs::path& path) {
  std::ofstream out(path);
  for (std::size_t k = 0; k < m.num_speakers(); ++k) {
    out << m.speakers[k];
    for (const auto& p : m.placements) {
      if (p.speaker != k) continue;
      for (const auto& w : p.transcript) out << ' ' << w;
    }
    out << '\n';
  }
}

// synth -------------------------------------------------------------------

Manifest cmd_synth(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  Manifest man;
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const json& cc = cfg.at("corpus");
  ToyCorpusConfig corpus;
  corpus.num_speakers = cc.at("speakers").get<std::size_t>();
  corpus.utterances_per_speaker = cc.at("utterances_per_speaker").get<std::size_t>();
  corpus.min_utterance_s = cc.at("min_utterance_s").get<double>();
  corpus.max_utterance_s = cc.at("max_utterance_s").get<double>();
  const auto eval_speakers = cc.at("eval_speakers").get<std::size_t>();
  const StftConfig stft = stft_from(cfg.at("stft"));
  const double thr = cfg.at("activity_threshold_db").get<double>();

  const json& tc = cfg.at("train");
  const json& ec = cfg.at("eval");
  auto mixture_config = [&](const json& j) {
    MixtureConfig mc;
    mc.num_speakers = j.at("num_speakers").get<std::size_t>();
    mc.max_overlap = j.at("max_overlap").get<double>();
    mc.min_len_s = j.at("min_len_s").get<double>();
    mc.activity.stft = stft;
    mc.activity.threshold_db = thr;
    if (mc.num_speakers < 1 || mc.num_speakers > 8) {
      throw ConfigError("synth: num_speakers must lie in [1, 8]");
    }
    if (!(mc.max_overlap >= 0.0 && mc.max_overlap <= 0.8)) {
      throw ConfigError("synth: max_overlap must lie in [0, 0.8]");
    }
    return mc;
  };
  ChunkSetConfig chunks;
  chunks.mixture = mixture_config(tc);
  chunks.count = tc.at("count").get<std::size_t>();
  chunks.chunk_s = tc.at("chunk_s").get<double>();
  const MixtureConfig eval_mix = mixture_config(ec);
  const auto eval_count = ec.at("count").get<std::size_t>();

  if (eval_speakers >= corpus.num_speakers) {
    throw ConfigError("synth: eval_speakers must leave speakers for training");
  }
  if (corpus.num_speakers - eval_speakers < chunks.mixture.num_speakers) {
    throw ConfigError("synth: not enough training speakers for train.num_speakers");
  }
  if (eval_count > 0 && eval_speakers < eval_mix.num_speakers) {
    throw ConfigError("synth: not enough held-out speakers for eval.num_speakers");
  }

  const std::vector<Utterance> pool = make_toy_corpus(corpus, seed);
  const auto speakers = make_toy_speakers(corpus.num_speakers, seed);
  std::vector<std::string> held_out;
  for (std::size_t s = corpus.num_speakers - eval_speakers; s < corpus.num_speakers; ++s) {
    held_out.push_back(speakers[s].id);
  }
  std::vector<Utterance> train_pool, eval_pool;
  for (const auto& u : pool) {
    const bool is_eval =
        std::find(held_out.begin(), held_out.end(), u.speaker_id) != held_out.end();
    (is_eval ? eval_pool : train_pool).push_back(u);
  }

  const std::vector<Mixture> train = make_chunks(train_pool, chunks, derive_seed(seed, {1}));
  std::vector<Mixture> eval(eval_count);
  parallel_for(eval_count, [&](std::size_t i) {
    eval[i] = synthesize_mixture(eval_pool, eval_mix, derive_seed(seed, {2, i}));
  });

  json corpus_json{{"stft", stft_to_json(stft)},
                   {"activity_threshold_db", thr},
                   {"sample_rate", kDefaultSampleRate},
                   {"train", json::array()},
                   {"eval", json::array()}};
  for (std::size_t i = 0; i < train.size(); ++i) {
    corpus_json["train"].push_back("train/" + mixture_id("m", i) + "/manifest.json");
  }
  for (std::size_t i = 0; i < eval.size(); ++i) {
    corpus_json["eval"].push_back("eval/" + mixture_id("e", i) + "/manifest.json");
  }
  parallel_for(train.size() + eval.size(), [&](std::size_t i) {
    if (i < train.size()) {
      write_mixture(train[i], out_dir / "train" / mixture_id("m", i), mixture_id("m", i));
    } else {
      const std::size_t e = i - train.size();
      const fs::path dir = out_dir / "eval" / mixture_id("e", e);
      write_mixture(eval[e], dir, mixture_id("e", e));
      write_transcripts(eval[e], dir / "ref.txt");
    }
  });
  std::ofstream(out_dir / "corpus.json") << corpus_json.dump(2) << '\n';

  std::size_t max_k = 0;
  double max_ov = 0.0;
  for (const auto& m : train) max_k = std::max(max_k, m.num_speakers());
  for (const auto& m : eval) {
    max_k = std::max(max_k, m.num_speakers());
    max_ov = std::max(max_ov, max_adjacent_overlap(m));
  }
  man.metrics = {{"train_mixtures", train.size()},
                 {"eval_mixtures", eval.size()},
                 {"held_out_speakers", held_out},
                 {"max_speakers", max_k},
                 {"max_adjacent_overlap_eval", max_ov}};
  out << "synth: " << train.size() << " training chunks, " << eval.size()
      << " evaluation mixtures -> " << out_dir.string() << '\n';
  return man;
}

// train -------------------------------------------------------------------

struct EvalLoss {
  double total = 0.0;
  double bce = 0.0;
  double l_sep = 0.0;
  double osl = 0.0;
};

EvalLoss held_out_loss(const TsNetParams& p, const std::vector<Mixture>& mixtures,
                       const Corpus& corpus, const LossSpec& spec,
                       const SpeakerEncoder& encoder) {
  EvalLoss acc;
  if (mixtures.empty()) return acc;
  std::vector<EvalLoss> per(mixtures.size());
  parallel_for(mixtures.size(), [&](std::size_t i) {
    const TrainExample ex = make_example(mixtures[i], corpus.stft, corpus.activity_threshold_db);
    std::vector<SpeakerEmbedding> targets;
    for (std::size_t k = 0; k < mixtures[i].num_speakers(); ++k) {
      targets.push_back(sample_embedding(mixtures[i], k, {}, 0, encoder).embedding);
    }
    const LossValue v = evaluate_loss(p, ex, targets, spec);
    per[i] = {v.total, v.bce, v.sep.l_sep, v.sep.osl};
  });
  for (const auto& e : per) {
    acc.total += e.total;
    acc.bce += e.bce;
    acc.l_sep += e.l_sep;
    acc.osl += e.osl;
  }
  const double n = static_cast<double>(mixtures.size());
  return {acc.total / n, acc.bce / n, acc.l_sep / n, acc.osl / n};
}

Manifest cmd_train(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  Manifest man;
  const fs::path corpus_path = existing(require(cfg, "corpus", "train"), "corpus");
  const StagePlan plan = StagePlan::from_json(cfg.at("plan"));
  const Corpus corpus = read_corpus(corpus_path);
  man.add_input(corpus_path);
  add_mixture_inputs(man, corpus.train);
  add_mixture_inputs(man, corpus.eval);
  if (corpus.train.empty()) throw std::runtime_error("corpus has no training mixtures");

  const ToyEncoder encoder = make_encoder(cfg.at("encoder"));
  TsNetDims dims;
  dims.F = static_cast<Eigen::Index>(corpus.stft.num_bins());
  dims.E = encoder.dim();
  dims.R = cfg.at("network").at("R").get<Eigen::Index>();
  dims.K_max = cfg.at("network").at("K_max").get<Eigen::Index>();
  dims.smoothing = cfg.at("network").at("smoothing").get<double>();
  dims.validate();

  std::optional<TsNetParams> init;
  if (plan.stage == Stage::kVad) {
    init = TsNetParams::random(dims, HeadKind::kVad, plan.seed);
  } else if (plan.random_init) {
    init = TsNetParams::random(dims, HeadKind::kMask, plan.seed);
  } else {
    if (!fs::exists(*plan.init_from)) {
      throw std::runtime_error("checkpoint not found: " + plan.init_from->string());
    }
    man.add_input(*plan.init_from);
    Checkpoint ck = load_checkpoint(*plan.init_from);
    if (!(ck.params.dims() == dims)) {
      throw std::runtime_error("init_from checkpoint dimensions do not match this corpus/network");
    }
    init = ck.params.head() == HeadKind::kVad ? init_stage2(ck.params) : std::move(ck.params);
  }

  const std::vector<Mixture> train_mix = load_all(corpus.train);
  const std::vector<Mixture> eval_mix = load_all(corpus.eval);
  for (const auto& m : train_mix) {
    if (static_cast<Eigen::Index>(m.num_speakers()) > dims.K_max) {
      throw std::runtime_error("training mixture has more speakers than K_max");
    }
  }
  const std::vector<TrainExample> examples =
      make_examples(train_mix, corpus.stft, corpus.activity_threshold_db);

  SamplingStats stats;
  const EmbeddingProvider provider = sampling_provider(
      train_mix, plan.sampling, encoder, derive_seed(plan.seed, {0x656d62}),
      plan.freeze_sampling, &stats);

  TrainConfig tc;
  if (plan.stage == Stage::kVad) {
    tc.loss.objective = Objective::kVad;
  } else {
    tc.loss.objective = Objective::kSeparation;
    tc.loss.osl.lambda = plan.osl_lambda;
    tc.loss.osl.p = plan.osl_p;
  }
  tc.optimizer = {plan.lr, plan.momentum, plan.clip_norm};
  tc.max_steps = plan.steps;
  tc.epochs = static_cast<int>((plan.steps + examples.size() - 1) / examples.size());
  tc.seed = plan.seed;
  tc.stage = plan.stage == Stage::kVad ? 1 : 2;
  log::info("train_start", {{"stage", to_string(plan.stage)},
                            {"steps", plan.steps},
                            {"examples", examples.size()},
                            {"sampling", to_string(plan.sampling.variant)}});
  const TrainResult result = train(*init, examples, provider, tc);

  json meta{{"stage", to_string(plan.stage)},
            {"stft", stft_to_json(corpus.stft)},
            {"encoder", cfg.at("encoder")},
            {"plan", plan.to_json()}};
  save_checkpoint(out_dir / "model.ckpt", result.params, meta);
  {
    std::ofstream csv(out_dir / "loss.csv");
    write_loss_csv(csv, result.curve);
  }

  json freq = json::object();
  static constexpr const char* kNames[] = {"V1", "V2", "V3", "V4"};
  for (std::size_t v = 0; v < 4; ++v) freq[kNames[v]] = stats.used[v];
  json sampling{{"requested", to_string(plan.sampling.variant)},
                {"frozen", plan.freeze_sampling},
                {"draws", freq},
                {"fallbacks", stats.fallbacks}};
  if (plan.sampling.variant == SamplingVariant::kUniformMix) {
    sampling["chi_square"] = stats.chi_square();
    sampling["chi_square_critical_p001"] = kChiSquare3;
    if (stats.chi_square() > kChiSquare3) {
      log::warn("sampling_frequency_audit_failed", {{"chi_square", stats.chi_square()}});
    }
  }
  log::info("sampling_draws", sampling);
  std::ofstream(out_dir / "sampling.json") << sampling.dump(2) << '\n';

  const std::size_t tail = std::min<std::size_t>(examples.size(), result.curve.size());
  double tail_mean = 0.0;
  for (std::size_t i = result.curve.size() - tail; i < result.curve.size(); ++i) {
    tail_mean += result.curve[i].loss.total;
  }
  tail_mean /= static_cast<double>(tail);
  const EvalLoss ev = held_out_loss(result.params, eval_mix, corpus, tc.loss, encoder);
  man.metrics = {{"steps", result.curve.size()},
                 {"first_loss", result.curve.front().loss.total},
                 {"last_epoch_mean_loss", tail_mean},
                 {"param_fingerprint", result.params.fingerprint()},
                 {"sampling", sampling}};
  if (!eval_mix.empty()) {
    man.metrics["eval"] = plan.stage == Stage::kVad
                              ? json{{"bce", ev.bce}}
                              : json{{"total", ev.total}, {"l_sep", ev.l_sep}, {"osl", ev.osl}};
  }
  out << "train(" << to_string(plan.stage) << "): " << result.curve.size()
      << " steps, loss " << result.curve.front().loss.total << " -> " << tail_mean
      << " (last epoch mean)\n";
  return man;
}

// infer -------------------------------------------------------------------

Manifest cmd_infer(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  Manifest man;
  const fs::path mix_path = existing(require(cfg, "mix", "infer"), "mixture");
  const fs::path ckpt_path = existing(require(cfg, "ckpt", "infer"), "checkpoint");
  man.add_input(mix_path);
  man.add_input(ckpt_path);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  if (ck.params.head() != HeadKind::kMask) {
    throw std::runtime_error("checkpoint " + ckpt_path.string() +
                             " is a voice activity model; infer needs a separation checkpoint");
  }
  const ToyEncoder encoder = make_encoder(ck.header.at("encoder"));
  const Waveform mix = read_wav(mix_path);

  PipelineConfig pc;
  pc.stft = stft_from(ck.header.at("stft"));
  pc.vad_threshold_db = cfg.at("vad_threshold_db").get<double>();
  pc.rules.merge_gap_s = cfg.at("merge_gap_s").get<double>();
  pc.rules.min_len_s = cfg.at("min_len_s").get<double>();
  pc.rules.pad_s = cfg.at("pad_s").get<double>();
  pc.window_s = cfg.at("window_s").get<double>();
  pc.mask_threshold = cfg.at("mask_threshold").get<double>();
  pc.cluster.seed = cfg.at("seed").get<std::uint64_t>();
  if (!cfg.at("num_speakers").is_null()) pc.num_speakers = cfg.at("num_speakers").get<int>();

  std::optional<Mixture> oracle;
  std::optional<OracleOverlapDetector> detector;
  if (!cfg.at("oracle_overlap").is_null()) {
    const fs::path op = existing(cfg.at("oracle_overlap"), "oracle overlap manifest");
    add_mixture_inputs(man, {op});
    oracle = load_mixture(op);
    detector.emplace(*oracle);
  }
  pc.overlap_filter = detector.has_value();
  const std::string rec = cfg.at("recording").get<std::string>();
  const PipelineResult r = run_pipeline(mix, ck.params, encoder,
                                        detector ? &*detector : nullptr, pc, rec);
  for (std::size_t k = 0; k < r.speakers.size(); ++k) {
    write_wav(out_dir / ("spk" + std::to_string(k) + ".wav"), r.speakers[k]);
  }
  write_rttm(out_dir / "hyp.rttm", r.diarization);
  const json report = r.report();
  std::ofstream(out_dir / "report.json") << report.dump(2) << '\n';
  man.metrics = {{"speakers", r.speakers.size()},
                 {"k_est", r.clusters.k_est},
                 {"segments", r.segments.size()},
                 {"windows", r.windows.size()},
                 {"turns", r.diarization.turns.size()}};
  out << "infer: " << r.speakers.size() << " speakers, " << r.diarization.turns.size()
      << " turns -> " << out_dir.string() << '\n';
  return man;
}

// score -------------------------------------------------------------------

std::vector<std::string> path_list(const json& v) {
  if (v.is_string()) return {v.get<std::string>()};
  return v.get<std::vector<std::string>>();
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << x;
  return s.str();
}

void print_table(std::ostream& out, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) w[c] = header[c].size();
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      out << (c ? "  " : "") << std::setw(static_cast<int>(w[c])) << std::left << r[c];
    }
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

json score_der(const json& cfg, Manifest& man, std::vector<std::vector<std::string>>& rows) {
  const auto refs = path_list(cfg.at("ref"));
  const auto hyps = path_list(cfg.at("hyp"));
  if (refs.size() != hyps.size()) throw ConfigError("score der: --ref and --hyp counts differ");
  const double collar = cfg.at("collar").get<double>();
  std::vector<DerResult> res(refs.size());
  for (const auto& p : refs) man.add_input(p);
  for (const auto& p : hyps) man.add_input(p);
  parallel_for(refs.size(), [&](std::size_t i) {
    res[i] = der(read_rttm(fs::path(refs[i])), read_rttm(fs::path(hyps[i])), collar);
  });
  DerResult total;
  json files = json::array();
  for (std::size_t i = 0; i < res.size(); ++i) {
    total.missed_s += res[i].missed_s;
    total.false_alarm_s += res[i].false_alarm_s;
    total.confusion_s += res[i].confusion_s;
    total.scored_speech_s += res[i].scored_speech_s;
    json f = res[i].to_json();
    f["ref"] = refs[i];
    f["hyp"] = hyps[i];
    files.push_back(f);
    rows.push_back({fs::path(refs[i]).filename().string(), fmt(100 * res[i].rate(), 2),
                    fmt(res[i].missed_s, 3), fmt(res[i].false_alarm_s, 3),
                    fmt(res[i].confusion_s, 3), fmt(res[i].scored_speech_s, 3)});
  }
  rows.push_back({"TOTAL", fmt(100 * total.rate(), 2), fmt(total.missed_s, 3),
                  fmt(total.false_alarm_s, 3), fmt(total.confusion_s, 3),
                  fmt(total.scored_speech_s, 3)});
  json t = total.to_json();
  t.erase("mapping");
  return {{"metric", "der"}, {"collar", collar}, {"files", files}, {"total", t},
          {"der", total.rate()}};
}

json score_sdr(const json& cfg, Manifest& man, std::vector<std::vector<std::string>>& rows) {
  const auto refs = path_list(cfg.at("ref"));
  const auto ests = path_list(cfg.at("hyp"));
  const bool permute = cfg.at("permute").get<bool>();
  if (!permute && refs.size() != ests.size()) {
    throw ConfigError("score sdr: --ref and --hyp counts differ (use --permute)");
  }
  for (const auto& p : refs) man.add_input(p);
  for (const auto& p : ests) man.add_input(p);
  std::vector<Waveform> rw(refs.size()), ew(ests.size());
  parallel_for(refs.size() + ests.size(), [&](std::size_t i) {
    if (i < refs.size()) {
      rw[i] = read_wav(refs[i]);
    } else {
      ew[i - refs.size()] = read_wav(ests[i - refs.size()]);
    }
  });
  std::vector<int> match(refs.size(), -1);
  Eigen::MatrixXd s(refs.size(), ests.size());
  auto fit = [](const Waveform& a, const Waveform& b) {
    Waveform e = b;
    e.samples.resize(a.size(), 0.0);
    return e;
  };
  parallel_for(refs.size() * ests.size(), [&](std::size_t i) {
    const std::size_t r = i / ests.size(), c = i % ests.size();
    if (permute || r == c) s(r, c) = sdr(rw[r], fit(rw[r], ew[c]));
  });
  if (permute && !ests.empty()) {
    match = min_cost_assignment(-s).row_to_col;
  } else {
    for (std::size_t r = 0; r < refs.size(); ++r) match[r] = static_cast<int>(r);
  }
  json files = json::array();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    json f{{"ref", refs[r]}};
    if (match[r] >= 0) {
      const double v = s(r, match[r]);
      f["hyp"] = ests[match[r]];
      f["sdr_db"] = v;
      sum += v;
      ++n;
      rows.push_back({fs::path(refs[r]).filename().string(),
                      fs::path(ests[match[r]]).filename().string(), fmt(v, 2)});
    } else {
      f["hyp"] = nullptr;
      rows.push_back({fs::path(refs[r]).filename().string(), "-", "-"});
    }
    files.push_back(f);
  }
  const double mean = n ? sum / static_cast<double>(n) : 0.0;
  rows.push_back({"MEAN", "", fmt(mean, 2)});
  return {{"metric", "sdr"}, {"files", files}, {"mean_sdr_db", mean}};
}

json score_cpwer(const json& cfg, Manifest& man, std::vector<std::vector<std::string>>& rows) {
  const auto refs = path_list(cfg.at("ref"));
  const auto hyps = path_list(cfg.at("hyp"));
  if (refs.size() != hyps.size()) throw ConfigError("score cpwer: --ref and --hyp counts differ");
  for (const auto& p : refs) man.add_input(p);
  for (const auto& p : hyps) man.add_input(p);
  std::vector<CpwerResult> res(refs.size());
  parallel_for(refs.size(), [&](std::size_t i) {
    res[i] = cpwer(read_transcripts(fs::path(refs[i])), read_transcripts(fs::path(hyps[i])));
  });
  std::size_t errors = 0, words = 0;
  json files = json::array();
  for (std::size_t i = 0; i < res.size(); ++i) {
    errors += res[i].errors;
    words += res[i].ref_words;
    json f = res[i].to_json();
    f["ref"] = refs[i];
    f["hyp"] = hyps[i];
    files.push_back(f);
    rows.push_back({fs::path(refs[i]).filename().string(), fmt(100 * res[i].rate(), 2),
                    std::to_string(res[i].errors), std::to_string(res[i].ref_words)});
  }
  const double rate = words ? static_cast<double>(errors) / static_cast<double>(words) : 0.0;
  rows.push_back({"TOTAL", fmt(100 * rate, 2), std::to_string(errors), std::to_string(words)});
  return {{"metric", "cpwer"}, {"files", files}, {"errors", errors}, {"ref_words", words},
          {"cpwer", rate}};
}

Manifest cmd_score(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  Manifest man;
  const std::string metric = cfg.at("metric").get<std::string>();
  if (path_list(cfg.at("ref")).empty()) throw ConfigError("score: no reference files");
  std::vector<std::vector<std::string>> rows;
  json result;
  std::vector<std::string> header;
  if (metric == "der") {
    result = score_der(cfg, man, rows);
    header = {"file", "DER%", "miss_s", "fa_s", "conf_s", "speech_s"};
  } else if (metric == "sdr") {
    result = score_sdr(cfg, man, rows);
    header = {"ref", "est", "SDR_dB"};
  } else if (metric == "cpwer") {
    result = score_cpwer(cfg, man, rows);
    header = {"file", "cpWER%", "errors", "words"};
  } else {
    throw ConfigError("score: unknown metric '" + metric + "' (der, sdr, cpwer)");
  }
  std::ofstream(out_dir / "score.json") << result.dump(2) << '\n';
  man.metrics = result;
  if (cfg.at("json").get<bool>()) {
    out << result.dump(2) << '\n';
  } else {
    print_table(out, header, rows);
  }
  return man;
}

// embed-study -------------------------------------------------------------

struct StudyRow {
  std::array<double, 4> cos_oracle{};   // V1..V4 vs V1 of the same speaker
  std::array<double, 4> cos_other{};    // vs V1 of the other speakers
  std::array<std::size_t, 4> fallbacks{};
  std::size_t speakers = 0;
  std::size_t others = 0;
  std::optional<double> purity_all;
  std::optional<double> purity_filtered;
  std::size_t windows = 0;
  std::size_t kept = 0;
};

Manifest cmd_embed_study(const json& cfg, const fs::path& out_dir, std::ostream& out) {
  Manifest man;
  const fs::path corpus_path = existing(require(cfg, "corpus", "embed-study"), "corpus");
  const Corpus corpus = read_corpus(corpus_path);
  const std::string split = cfg.at("split").get<std::string>();
  if (split != "train" && split != "eval") throw ConfigError("embed-study: split is train or eval");
  const auto& paths = split == "train" ? corpus.train : corpus.eval;
  man.add_input(corpus_path);
  add_mixture_inputs(man, paths);
  const ToyEncoder encoder = make_encoder(cfg.at("encoder"));
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const double win = cfg.at("window_s").get<double>();
  const std::vector<Mixture> mixes = load_all(paths);

  std::vector<StudyRow> rows(mixes.size());
  parallel_for(mixes.size(), [&](std::size_t i) {
    const Mixture& m = mixes[i];
    StudyRow& row = rows[i];
    const std::uint64_t s = derive_seed(seed, {i});
    std::vector<SpeakerEmbedding> oracle;
    for (std::size_t k = 0; k < m.num_speakers(); ++k) {
      oracle.push_back(sample_embedding(m, k, {}, s, encoder).embedding);
    }
    for (std::size_t k = 0; k < m.num_speakers(); ++k) {
      ++row.speakers;
      for (std::size_t v = 0; v < 4; ++v) {
        SamplingStrategy st;
        st.variant = static_cast<SamplingVariant>(v);
        const SampledEmbedding e = sample_embedding(m, k, st, s, encoder);
        row.cos_oracle[v] += e.embedding.cosine(oracle[k]);
        if (e.fell_back) ++row.fallbacks[v];
        for (std::size_t o = 0; o < m.num_speakers(); ++o) {
          if (o != k) row.cos_other[v] += e.embedding.cosine(oracle[o]);
        }
      }
      row.others += m.num_speakers() - 1;
    }

    std::vector<TimeWindow> windows;
    std::vector<SpeakerEmbedding> embs;
    std::vector<int> truth;
    for (const auto& w : extract_windows(m.mix, win)) {
      const int t = dominant_speaker(m, w);
      if (t < 0) continue;
      try {
        embs.push_back(encoder.encode_span(m.mix, w.start_s, w.end_s));
      } catch (const std::invalid_argument&) {
        continue;
      }
      windows.push_back(w);
      truth.push_back(t);
    }
    row.windows = windows.size();
    const int k = static_cast<int>(m.num_speakers());
    SpectralClusterConfig cc;
    cc.seed = s;
    if (static_cast<int>(embs.size()) >= std::max(2, k)) {
      const auto a = spectral_cluster(embs, k, cc);
      row.purity_all = cluster_purity(a.labels, truth);
    }
    const OracleOverlapDetector det(m);
    std::vector<SpeakerEmbedding> fe;
    std::vector<int> ft;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      if (single_fraction(windows[w], det) > 0.5) {
        fe.push_back(embs[w]);
        ft.push_back(truth[w]);
      }
    }
    row.kept = fe.size();
    if (static_cast<int>(fe.size()) >= std::max(2, k)) {
      const auto a = spectral_cluster(fe, k, cc);
      row.purity_filtered = cluster_purity(a.labels, ft);
    }
  });

  static constexpr const char* kNames[] = {"V1", "V2", "V3", "V4"};
  std::array<double, 4> co{}, ct{};
  std::array<std::size_t, 4> fb{};
  std::size_t speakers = 0, others = 0;
  double pa = 0.0, pf = 0.0;
  std::size_t paired = 0;
  json per = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    for (std::size_t v = 0; v < 4; ++v) {
      co[v] += r.cos_oracle[v];
      ct[v] += r.cos_other[v];
      fb[v] += r.fallbacks[v];
    }
    speakers += r.speakers;
    others += r.others;
    json pm{{"mixture", fs::relative(paths[i], corpus.root).generic_string()},
            {"windows", r.windows},
            {"kept_after_filter", r.kept},
            {"purity_unfiltered", r.purity_all ? json(*r.purity_all) : json(nullptr)},
            {"purity_filtered", r.purity_filtered ? json(*r.purity_filtered) : json(nullptr)}};
    per.push_back(pm);
    if (r.purity_all && r.purity_filtered) {
      pa += *r.purity_all;
      pf += *r.purity_filtered;
      ++paired;
    }
  }
  json variants = json::object();
  std::vector<std::vector<std::string>> table;
  for (std::size_t v = 0; v < 4; ++v) {
    const double same = speakers ? co[v] / static_cast<double>(speakers) : 0.0;
    const double other = others ? ct[v] / static_cast<double>(others) : 0.0;
    variants[kNames[v]] = {{"mean_cos_same_speaker_oracle", same},
                           {"mean_cos_other_speaker_oracle", other},
                           {"fallbacks", fb[v]}};
    table.push_back({kNames[v], fmt(same), fmt(other), std::to_string(fb[v])});
  }
  json purity{{"mixtures_compared", paired},
              {"mean_unfiltered", paired ? json(pa / paired) : json(nullptr)},
              {"mean_filtered", paired ? json(pf / paired) : json(nullptr)}};
  json report{{"split", split}, {"variants", variants}, {"purity", purity}, {"mixtures", per}};
  std::ofstream(out_dir / "embed_study.json") << report.dump(2) << '\n';
  man.metrics = {{"variants", variants}, {"purity", purity}};
  print_table(out, {"variant", "cos_same", "cos_other", "fallbacks"}, table);
  if (paired) {
    out << "purity over " << paired << " mixtures: unfiltered " << fmt(pa / paired)
        << ", overlap-filtered " << fmt(pf / paired) << '\n';
  }
  return man;
}

}  // namespace

json default_config(const std::string& command) {
  if (command == "synth") {
    return {{"seed", 0},
            {"corpus",
             {{"speakers", 12},
              {"utterances_per_speaker", 4},
              {"min_utterance_s", 2.0},
              {"max_utterance_s", 4.0},
              {"eval_speakers", 4}}},
            {"train",
             {{"count", 16},
              {"num_speakers", 2},
              {"min_len_s", 12.0},
              {"chunk_s", 6.0},
              {"max_overlap", 0.8}}},
            {"eval", {{"count", 2}, {"num_speakers", 2}, {"min_len_s", 20.0}, {"max_overlap", 0.8}}},
            {"stft", {{"window", 256}, {"hop", 128}}},
            {"activity_threshold_db", -40.0}};
  }
  if (command == "train") {
    json plan = StagePlan{}.to_json();
    plan["lr"] = nullptr;     // 0.1 for vad, 0.01 for sep
    plan["steps"] = nullptr;  // 200 for vad, 160 for sep
    return {{"corpus", nullptr},
            {"network", {{"R", 32}, {"K_max", 8}, {"smoothing", 0.8}}},
            {"encoder", {{"dim", 40}}},
            {"plan", plan}};
  }
  if (command == "infer") {
    return {{"mix", nullptr},
            {"ckpt", nullptr},
            {"seed", 0},
            {"vad_threshold_db", -40.0},
            {"num_speakers", nullptr},
            {"window_s", 2.0},
            {"oracle_overlap", nullptr},
            {"mask_threshold", 0.5},
            {"merge_gap_s", 0.8},
            {"min_len_s", 0.5},
            {"pad_s", 0.01},
            {"recording", "rec"}};
  }
  if (command == "score") {
    return {{"metric", "der"},
            {"ref", json::array()},
            {"hyp", json::array()},
            {"collar", 0.25},
            {"permute", true},
            {"json", false}};
  }
  if (command == "embed-study") {
    return {{"corpus", nullptr},
            {"split", "eval"},
            {"seed", 0},
            {"encoder", {{"dim", 40}}},
            {"window_s", 2.0}};
  }
  throw ConfigError("unknown command '" + command + "'");
}

json resolve_config(const std::string& command, const json& file_section,
                    const json& overrides) {
  json cfg = default_config(command);
  if (!file_section.is_null()) merge_strict(cfg, file_section, command);
  if (!overrides.is_null()) merge_strict(cfg, overrides, command);

  auto absolutize = [&](json& v) {
    if (v.is_string()) v = absolute_path(v.get<std::string>());
    if (v.is_array()) {
      for (auto& e : v) e = absolute_path(e.get<std::string>());
    }
  };
  if (command == "train") {
    absolutize(cfg["corpus"]);
    json& plan = cfg["plan"];
    absolutize(plan["init_from"]);
    const bool sep = parse_stage(plan.at("stage").get<std::string>()) == Stage::kSep;
    if (plan["lr"].is_null()) plan["lr"] = sep ? 0.01 : 0.1;
    if (plan["steps"].is_null()) plan["steps"] = sep ? 160 : 200;
    plan = StagePlan::from_json(plan).to_json();
  } else if (command == "infer") {
    absolutize(cfg["mix"]);
    absolutize(cfg["ckpt"]);
    absolutize(cfg["oracle_overlap"]);
  } else if (command == "score") {
    absolutize(cfg["ref"]);
    absolutize(cfg["hyp"]);
  } else if (command == "embed-study") {
    absolutize(cfg["corpus"]);
  }
  return cfg;
}

Manifest execute(const std::string& command, const json& config, const fs::path& out_dir,
                 std::ostream& out) {
  fs::create_directories(out_dir);
  std::ofstream log_file(out_dir / "log.jsonl", std::ios::app);
  TeeBuf tee(log_file.rdbuf(), std::cerr.rdbuf());
  std::ostream log_stream(&tee);
  log::set_sink(&log_stream);
  struct Restore {
    ~Restore() { log::set_sink(&std::cerr); }
  } restore;

  const std::string started = utc_timestamp();
  Manifest man;
  if (command == "synth") {
    man = cmd_synth(config, out_dir, out);
  } else if (command == "train") {
    man = cmd_train(config, out_dir, out);
  } else if (command == "infer") {
    man = cmd_infer(config, out_dir, out);
  } else if (command == "score") {
    man = cmd_score(config, out_dir, out);
  } else if (command == "embed-study") {
    man = cmd_embed_study(config, out_dir, out);
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }
  man.command = command;
  man.config = config;
  man.started_at = started;
  man.finished_at = utc_timestamp();
  man.hash_outputs(out_dir);
  man.write(out_dir / "manifest.json");
  log::info("manifest_written", {{"command", command}, {"outputs", man.outputs.size()}});
  return man;
}

ReplayResult replay(const Manifest& recorded, const fs::path& out_dir, std::ostream& out) {
  for (const auto& [path, hash] : recorded.inputs) {
    if (!fs::exists(path)) throw std::runtime_error("replay input missing: " + path);
    if (sha256_file(path) != hash) throw std::runtime_error("replay input changed: " + path);
  }
  ReplayResult r;
  r.replayed = execute(recorded.command, recorded.config, out_dir, out);
  for (const auto& [name, hash] : recorded.outputs) {
    const auto it = r.replayed.outputs.find(name);
    if (it == r.replayed.outputs.end()) {
      r.differences.push_back("missing output " + name);
    } else if (it->second != hash) {
      r.differences.push_back("output differs: " + name);
    }
  }
  for (const auto& [name, _] : r.replayed.outputs) {
    if (!recorded.outputs.count(name)) r.differences.push_back("extra output " + name);
  }
  // Compare in serialised form so integer/unsigned/float encodings agree.
  if (json::parse(r.replayed.metrics.dump()) != recorded.metrics) {
    r.differences.push_back("metrics differ");
  }
  r.identical = r.differences.empty();
  return r;
}

}  // namespace tsep::cli
