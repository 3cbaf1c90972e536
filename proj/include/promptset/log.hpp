#pragma once

#include <string_view>

#include <nlohmann/json.hpp>

namespace promptset::log {

enum class Format { text, json };

void set_format(Format format);
void set_quiet(bool quiet);

// One record per line on stderr. In json mode: {"level","event",...fields}.
void info(std::string_view event, const nlohmann::json& fields = nlohmann::json::object());
void warn(std::string_view event, const nlohmann::json& fields = nlohmann::json::object());
void error(std::string_view event, const nlohmann::json& fields = nlohmann::json::object());

}  // namespace promptset::log
