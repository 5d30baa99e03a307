// Stage plans, run manifests and the small utilities the command-line tool
// is built from: content hashing, strict config sections, fan-out.
#ifndef TSEP_EXPERIMENT_HPP_
#define TSEP_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tsep/embed.hpp"
#include "tsep/tsnet.hpp"

namespace tsep {

// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Thrown for malformed configuration; the message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// j must be an object whose keys are all in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                std::string_view where);

// Typed lookup: returns fallback when key is absent, throws ConfigError when
// present with the wrong type.
template <typename T>
T config_value(const nlohmann::json& j, std::string_view key, const T& fallback,
               std::string_view where) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(where) + "." + std::string(key) + ": wrong type");
  }
}

enum class Stage { kVad, kSep };
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

struct StagePlan {
  Stage stage = Stage::kVad;
  SamplingStrategy sampling;
  bool freeze_sampling = false;
  std::optional<std::filesystem::path> init_from;
  bool random_init = false;
  double osl_lambda = 0.08;  // sep only
  int osl_p = 1;
  int steps = 200;
  double lr = 0.1;
  double momentum = 0.9;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  // Throws ConfigError: sep needs init_from or random_init (not both), vad
  // takes neither, lambda in [0, 0.2], positive steps and lr.
  void validate() const;
  nlohmann::json to_json() const;
  static StagePlan from_json(const nlohmann::json& j);
};

// Everything needed to re-run a command and check its outputs. Timestamps
// are recorded but never compared.
struct Manifest {
  std::string command;
  nlohmann::json config;                      // resolved, absolute paths
  std::map<std::string, std::string> inputs;  // absolute path -> sha256
  std::map<std::string, std::string> outputs; // path relative to out dir -> sha256
  nlohmann::json metrics = nlohmann::json::object();
  std::string started_at;
  std::string finished_at;

  void add_input(const std::filesystem::path& p);
  // Hashes every regular file under dir except manifest.json and log files.
  void hash_outputs(const std::filesystem::path& dir);

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
  void write(const std::filesystem::path& path) const;
  static Manifest read(const std::filesystem::path& path);
};

// ISO-8601 UTC, second resolution.
std::string utc_timestamp();

// Runs fn(0..n-1) on up to `workers` threads (0 = hardware concurrency).
// The first exception thrown by any call is rethrown after all threads join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t workers = 0);

}  // namespace tsep

#endif  // TSEP_EXPERIMENT_HPP_
