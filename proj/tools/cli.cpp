#include <algorithm>
#include <fstream>
#include <optional>
#include <random>

#include <CLI11.hpp>

#include "commands.hpp"
#include "tsep/log.hpp"

namespace tsep::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kMismatch = 3 };

void error_line(std::ostream& err, std::string_view event, const std::string& message) {
  err << json{{"level", "error"}, {"event", event}, {"message", message}}.dump() << '\n';
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  check_keys(j, {"seed", "synth", "train", "infer", "score", "embed-study"}, "config");
  return j;
}

template <typename T>
void put(json& j, const std::string& key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

fs::path scratch_dir(const std::string& tag) {
  std::random_device rd;
  const fs::path p = fs::temp_directory_path() /
                     ("tsep-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
  fs::create_directories(p);
  return p;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Target-speaker voice activity detection and separation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir;
  std::string log_level = "info";
  app.add_option("--seed", seed, "Random seed for the command");
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir, "Output directory");
  app.add_option("--log-level", log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  json overrides = json::object();

  // synth
  auto* synth = app.add_subcommand("synth", "Synthesize a toy corpus of overlapped mixtures");
  std::optional<std::size_t> train_count, eval_count, mix_speakers;
  std::optional<double> chunk_s;
  synth->add_option("--train-count", train_count, "Training chunks");
  synth->add_option("--eval-count", eval_count, "Held-out evaluation mixtures");
  synth->add_option("--speakers", mix_speakers, "Speakers per mixture (at most 8)");
  synth->add_option("--chunk-s", chunk_s, "Training chunk length in seconds");

  // train
  auto* train = app.add_subcommand("train", "Train a stage-1 (vad) or stage-2 (sep) model");
  std::optional<std::string> corpus, stage, sampling, init_from;
  std::optional<int> steps, osl_p, latent;
  std::optional<double> lr, osl_lambda;
  bool random_init = false, freeze = false;
  train->add_option("--corpus", corpus, "corpus.json written by synth");
  train->add_option("--stage", stage, "vad (1) or sep (2)");
  train->add_option("--sampling", sampling, "V1, V2, V3, V4 or UNIFORM_MIX");
  train->add_option("--init-from", init_from, "Stage-1 checkpoint for a sep stage");
  train->add_flag("--random-init", random_init, "Start a sep stage from random parameters");
  train->add_flag("--freeze-sampling", freeze, "Draw embeddings once instead of every epoch");
  train->add_option("--steps", steps, "Parameter updates");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--osl-lambda", osl_lambda, "Overlapping spectral loss weight, [0, 0.2]");
  train->add_option("--osl-p", osl_p, "Overlapping spectral loss exponent, 1 or 2");
  train->add_option("--latent", latent, "Latent size R");

  // infer
  auto* infer = app.add_subcommand("infer", "Diarize and separate a recording");
  std::optional<std::string> mix, ckpt, oracle, recording;
  std::optional<double> vad_db, window_s;
  std::optional<int> num_speakers;
  infer->add_option("--mix", mix, "16 kHz mono WAV");
  infer->add_option("--ckpt", ckpt, "Separation checkpoint");
  infer->add_option("--vad-threshold-db", vad_db, "Energy VAD threshold relative to the signal");
  infer->add_option("--num-speakers", num_speakers, "Known speaker count (skips estimation)");
  infer->add_option("--window-s", window_s, "Clustering window length");
  infer->add_option("--oracle-overlap", oracle,
                    "Mixture manifest used as an oracle overlap detector for window filtering");
  infer->add_option("--recording", recording, "Recording name written to the RTTM");

  // score
  auto* score = app.add_subcommand("score", "Score diarization, separation or transcripts");
  score->require_subcommand(1);
  std::vector<std::string> refs, hyps;
  std::optional<double> collar;
  bool as_json = false, no_permute = false;
  for (const char* metric : {"der", "sdr", "cpwer"}) {
    auto* s = score->add_subcommand(metric);
    s->add_option("--ref", refs, "Reference file(s)")->required();
    s->add_option("--hyp,--est", hyps, "Hypothesis file(s), paired with --ref")->required();
    s->add_flag("--json", as_json, "Print JSON instead of a table");
    if (std::string(metric) == "der") s->add_option("--collar", collar, "Collar in seconds");
    if (std::string(metric) == "sdr") {
      s->add_flag("--no-permute", no_permute, "Pair files in order instead of best match");
    }
  }

  // embed-study
  auto* study = app.add_subcommand("embed-study", "Compare embedding sampling variants");
  std::optional<std::string> study_corpus, split;
  std::optional<int> dim;
  study->add_option("--corpus", study_corpus, "corpus.json written by synth");
  study->add_option("--split", split, "train or eval");
  study->add_option("--dim", dim, "Encoder dimension");

  // replay
  auto* rep = app.add_subcommand("replay", "Re-run a command from its manifest and compare");
  std::string manifest_path;
  rep->add_option("manifest", manifest_path, "manifest.json")->required()->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    for (auto* sub : app.get_subcommands()) out << sub->help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    error_line(err, "usage_error", e.what());
    return kUsage;
  }

  const std::map<std::string, log::Level> levels{{"debug", log::Level::kDebug},
                                                 {"info", log::Level::kInfo},
                                                 {"warn", log::Level::kWarn},
                                                 {"error", log::Level::kError},
                                                 {"off", log::Level::kOff}};
  log::set_level(levels.at(log_level));

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "replay") {
      const Manifest recorded = Manifest::read(manifest_path);
      const fs::path dir = out_dir.empty() ? scratch_dir("replay") : fs::path(out_dir);
      const ReplayResult r = replay(recorded, dir, out);
      json summary{{"command", recorded.command},
                   {"out_dir", dir.string()},
                   {"identical", r.identical},
                   {"differences", r.differences}};
      out << summary.dump() << '\n';
      return r.identical ? kOk : kMismatch;
    }

    json file = json::object();
    if (!config_path.empty()) file = read_config_file(config_path);
    json section = file.value(command, json::object());
    if (command == "synth") {
      if (file.contains("seed") && !section.contains("seed")) section["seed"] = file["seed"];
      put(overrides, "seed", seed);
      if (train_count) overrides["train"]["count"] = *train_count;
      if (chunk_s) overrides["train"]["chunk_s"] = *chunk_s;
      if (eval_count) overrides["eval"]["count"] = *eval_count;
      if (mix_speakers) {
        overrides["train"]["num_speakers"] = *mix_speakers;
        overrides["eval"]["num_speakers"] = *mix_speakers;
      }
    } else if (command == "train") {
      if (file.contains("seed") && !section.value("plan", json::object()).contains("seed")) {
        section["plan"]["seed"] = file["seed"];
      }
      put(overrides, "corpus", corpus);
      json plan = json::object();
      put(plan, "seed", seed);
      put(plan, "stage", stage);
      put(plan, "sampling", sampling);
      put(plan, "init_from", init_from);
      if (random_init) plan["random_init"] = true;
      if (freeze) plan["freeze_sampling"] = true;
      put(plan, "steps", steps);
      put(plan, "lr", lr);
      put(plan, "osl_lambda", osl_lambda);
      put(plan, "osl_p", osl_p);
      if (!plan.empty()) overrides["plan"] = plan;
      if (latent) overrides["network"]["R"] = *latent;
    } else if (command == "infer") {
      if (file.contains("seed") && !section.contains("seed")) section["seed"] = file["seed"];
      put(overrides, "seed", seed);
      put(overrides, "mix", mix);
      put(overrides, "ckpt", ckpt);
      put(overrides, "vad_threshold_db", vad_db);
      put(overrides, "num_speakers", num_speakers);
      put(overrides, "window_s", window_s);
      put(overrides, "oracle_overlap", oracle);
      put(overrides, "recording", recording);
    } else if (command == "score") {
      overrides["metric"] = app.get_subcommands().front()->get_subcommands().front()->get_name();
      overrides["ref"] = refs;
      overrides["hyp"] = hyps;
      if (as_json) overrides["json"] = true;
      if (no_permute) overrides["permute"] = false;
      put(overrides, "collar", collar);
    } else if (command == "embed-study") {
      if (file.contains("seed") && !section.contains("seed")) section["seed"] = file["seed"];
      put(overrides, "seed", seed);
      put(overrides, "corpus", study_corpus);
      put(overrides, "split", split);
      if (dim) overrides["encoder"]["dim"] = *dim;
    }

    const json cfg = resolve_config(command, section, overrides);
    if (out_dir.empty()) {
      if (command != "score") throw ConfigError(command + ": --out-dir is required");
      // Scores without --out-dir are printed only.
      const fs::path tmp = scratch_dir("score");
      execute(command, cfg, tmp, out);
      fs::remove_all(tmp);
    } else {
      execute(command, cfg, out_dir, out);
    }
    return kOk;
  } catch (const ConfigError& e) {
    error_line(err, "config_error", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    error_line(err, "command_failed", e.what());
    return kFailure;
  }
}

}  // namespace tsep::cli
