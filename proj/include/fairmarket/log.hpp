#pragma once

#include <string>
#include <string_view>

#include "json.hpp"

namespace fairmarket::log {

enum class Mode {
  json,   // one JSON object per line on stderr
  quiet,  // only human summaries and warnings
  silent,
};

void set_mode(Mode mode);
Mode mode();

/// Emits `{"event": ..., <fields>}` in json mode.
void event(std::string_view name, const nlohmann::json& fields = nlohmann::json::object());
/// Emitted in json and quiet modes.
void warn(std::string_view name, const nlohmann::json& fields = nlohmann::json::object());
/// Plain human-readable line; printed in quiet mode only.
void summary(std::string_view text);

}  // namespace fairmarket::log
