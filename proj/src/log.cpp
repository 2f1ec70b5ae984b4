#include "fairmarket/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace fairmarket::log {
namespace {

std::atomic<Mode> g_mode{Mode::json};
std::mutex g_mutex;

void emit(std::string_view level, std::string_view name, const nlohmann::json& fields) {
  nlohmann::json line = nlohmann::json::object();
  line["level"] = level;
  line["event"] = name;
  if (fields.is_object()) {
    for (const auto& [k, v] : fields.items()) line[k] = v;
  }
  std::lock_guard lock(g_mutex);
  std::cerr << line.dump() << '\n';
}

}  // namespace

void set_mode(Mode m) { g_mode = m; }
Mode mode() { return g_mode; }

void event(std::string_view name, const nlohmann::json& fields) {
  if (g_mode == Mode::json) emit("info", name, fields);
}

void warn(std::string_view name, const nlohmann::json& fields) {
  if (g_mode != Mode::silent) emit("warn", name, fields);
}

void summary(std::string_view text) {
  if (g_mode != Mode::quiet) return;
  std::lock_guard lock(g_mutex);
  std::cerr << text << '\n';
}

}  // namespace fairmarket::log
