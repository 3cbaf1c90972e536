#include "promptset/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <string>

#include "promptset/fsutil.hpp"

namespace promptset::log {

namespace {
std::atomic<Format> g_format{Format::text};
std::atomic<bool> g_quiet{false};
std::mutex g_mutex;

void emit(std::string_view level, std::string_view event, const nlohmann::json& fields) {
  if (g_quiet && level == "info") return;
  std::string line;
  if (g_format == Format::json) {
    nlohmann::json rec = fields.is_object() ? fields : nlohmann::json{{"detail", fields}};
    rec["level"] = level;
    rec["event"] = event;
    rec["ts"] = utc_timestamp();
    line = rec.dump();
  } else {
    line = std::string(level) + ": " + std::string(event);
    if (fields.is_object() && !fields.empty()) line += " " + fields.dump();
  }
  std::lock_guard lock(g_mutex);
  std::cerr << line << '\n';
}
}  // namespace

void set_format(Format format) { g_format = format; }
void set_quiet(bool quiet) { g_quiet = quiet; }

void info(std::string_view event, const nlohmann::json& fields) { emit("info", event, fields); }
void warn(std::string_view event, const nlohmann::json& fields) { emit("warn", event, fields); }
void error(std::string_view event, const nlohmann::json& fields) { emit("error", event, fields); }

}  // namespace promptset::log
