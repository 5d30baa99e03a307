#include "tsep/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

namespace tsep {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      EVP_MD_CTX_free(ctx_);
      throw std::runtime_error("sha256: digest initialisation failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const char* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw std::runtime_error("sha256: update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw std::runtime_error("sha256: final failed");
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
      out.push_back(kDigits[md[i] >> 4]);
      out.push_back(kDigits[md[i] & 0xf]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

std::string_view to_string(Stage s) { return s == Stage::kVad ? "vad" : "sep"; }

Stage parse_stage(std::string_view s) {
  if (s == "vad" || s == "1") return Stage::kVad;
  if (s == "sep" || s == "2") return Stage::kSep;
  throw ConfigError("unknown stage '" + std::string(s) + "' (expected vad or sep)");
}

void StagePlan::validate() const {
  if (stage == Stage::kSep) {
    if (!init_from && !random_init) {
      throw ConfigError("sep stage needs init_from or random_init");
    }
    if (init_from && random_init) {
      throw ConfigError("init_from and random_init are mutually exclusive");
    }
    if (!(osl_lambda >= 0.0 && osl_lambda <= 0.2)) {
      throw ConfigError("osl_lambda must lie in [0, 0.2]");
    }
    if (osl_p != 1 && osl_p != 2) throw ConfigError("osl_p must be 1 or 2");
  } else if (init_from || random_init) {
    throw ConfigError("vad stage always starts from random parameters");
  }
  if (steps <= 0) throw ConfigError("steps must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
  try {
    sampling.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("sampling: ") + e.what());
  }
}

json StagePlan::to_json() const {
  json j{{"stage", to_string(stage)},
         {"sampling", to_string(sampling.variant)},
         {"overlap_fraction", sampling.overlap_fraction},
         {"silence_min_ms", sampling.silence_min_ms},
         {"silence_max_ms", sampling.silence_max_ms},
         {"freeze_sampling", freeze_sampling},
         {"init_from", init_from ? json(init_from->string()) : json(nullptr)},
         {"random_init", random_init},
         {"osl_lambda", osl_lambda},
         {"osl_p", osl_p},
         {"steps", steps},
         {"lr", lr},
         {"momentum", momentum},
         {"clip_norm", clip_norm},
         {"seed", seed}};
  return j;
}

StagePlan StagePlan::from_json(const json& j) {
  static constexpr std::string_view kWhere = "plan";
  check_keys(j,
             {"stage", "sampling", "overlap_fraction", "silence_min_ms", "silence_max_ms",
              "freeze_sampling", "init_from", "random_init", "osl_lambda", "osl_p", "steps",
              "lr", "momentum", "clip_norm", "seed"},
             kWhere);
  StagePlan p;
  p.stage = parse_stage(config_value<std::string>(j, "stage", "vad", kWhere));
  try {
    p.sampling.variant =
        parse_sampling_variant(config_value<std::string>(j, "sampling", "V1", kWhere));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("plan.sampling: ") + e.what());
  }
  p.sampling.overlap_fraction =
      config_value(j, "overlap_fraction", p.sampling.overlap_fraction, kWhere);
  p.sampling.silence_min_ms = config_value(j, "silence_min_ms", p.sampling.silence_min_ms, kWhere);
  p.sampling.silence_max_ms = config_value(j, "silence_max_ms", p.sampling.silence_max_ms, kWhere);
  p.freeze_sampling = config_value(j, "freeze_sampling", false, kWhere);
  if (auto it = j.find("init_from"); it != j.end() && !it->is_null()) {
    p.init_from = fs::path(config_value<std::string>(j, "init_from", "", kWhere));
  }
  p.random_init = config_value(j, "random_init", false, kWhere);
  p.osl_lambda = config_value(j, "osl_lambda", p.osl_lambda, kWhere);
  p.osl_p = config_value(j, "osl_p", p.osl_p, kWhere);
  p.steps = config_value(j, "steps", p.steps, kWhere);
  p.lr = config_value(j, "lr", p.lr, kWhere);
  p.momentum = config_value(j, "momentum", p.momentum, kWhere);
  p.clip_norm = config_value(j, "clip_norm", p.clip_norm, kWhere);
  p.seed = config_value<std::uint64_t>(j, "seed", 0, kWhere);
  p.validate();
  return p;
}

void Manifest::add_input(const fs::path& p) {
  const fs::path abs = fs::absolute(p).lexically_normal();
  inputs[abs.string()] = sha256_file(abs);
}

void Manifest::hash_outputs(const fs::path& dir) {
  outputs.clear();
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir);
    const std::string name = rel.filename().string();
    if (rel == "manifest.json" || name == "log.jsonl") continue;
    outputs[rel.generic_string()] = sha256_file(e.path());
  }
}

json Manifest::to_json() const {
  return json{{"tool", "tsep"},
              {"command", command},
              {"config", config},
              {"inputs", inputs},
              {"outputs", outputs},
              {"metrics", metrics},
              {"started_at", started_at},
              {"finished_at", finished_at}};
}

Manifest Manifest::from_json(const json& j) {
  check_keys(j, {"tool", "command", "config", "inputs", "outputs", "metrics", "started_at",
                 "finished_at"},
             "manifest");
  Manifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.inputs = j.value("inputs", std::map<std::string, std::string>{});
    m.outputs = j.value("outputs", std::map<std::string, std::string>{});
    m.metrics = j.value("metrics", json::object());
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  return m;
}

void Manifest::write(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

Manifest Manifest::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t workers) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto body = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace tsep
