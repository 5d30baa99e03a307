// Line-delimited JSON event log. One object per line:
//   {"level":"warn","event":"...", ...fields}

#ifndef TSEP_LOG_HPP_
#define TSEP_LOG_HPP_

#include <ostream>
#include <string_view>

#include <json.hpp>

namespace tsep::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

// Defaults: std::cerr, kInfo.
void set_sink(std::ostream* sink);
void set_level(Level level);
Level level();

void emit(Level level, std::string_view event,
          const nlohmann::json& fields = nlohmann::json::object());

inline void debug(std::string_view e, const nlohmann::json& f = nlohmann::json::object()) {
  emit(Level::kDebug, e, f);
}
inline void info(std::string_view e, const nlohmann::json& f = nlohmann::json::object()) {
  emit(Level::kInfo, e, f);
}
inline void warn(std::string_view e, const nlohmann::json& f = nlohmann::json::object()) {
  emit(Level::kWarn, e, f);
}

}  // namespace tsep::log

#endif  // TSEP_LOG_HPP_
