#include "tsep/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace tsep::log {

namespace {

std::mutex g_mutex;
std::ostream* g_sink = &std::cerr;
std::atomic<Level> g_level{Level::kInfo};

const char* name(Level l) {
  switch (l) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warn";
    case Level::kError: return "error";
    default: return "off";
  }
}

}  // namespace

void set_sink(std::ostream* sink) {
  std::lock_guard lock(g_mutex);
  g_sink = sink;
}

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void emit(Level lvl, std::string_view event, const nlohmann::json& fields) {
  if (lvl < g_level.load()) return;
  nlohmann::json line = {{"level", name(lvl)}, {"event", event}};
  if (fields.is_object()) {
    for (auto it = fields.begin(); it != fields.end(); ++it) {
      line[it.key()] = it.value();
    }
  }
  std::lock_guard lock(g_mutex);
  if (g_sink) *g_sink << line.dump() << '\n';
}

}  // namespace tsep::log
