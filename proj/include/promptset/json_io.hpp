#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "promptset/core.hpp"

namespace promptset {

using json = nlohmann::json;

/// Rounds to 9 significant digits. Every real that reaches disk goes
/// through this, so a value written and read back compares equal.
double canonical_real(double value);

/// Sorted keys (nlohmann's default object ordering), two-space indent,
/// trailing newline.
std::string dump_canonical(const json& value);

json parse_json(const std::string& text, const std::string& origin);

json box_to_json(const BBox& box);
BBox box_from_json(const json& j, Space space);

json rle_to_json(const MaskRLE& rle);
MaskRLE rle_from_json(const json& j);

json detection_to_json(const Detection& det);
Detection detection_from_json(const json& j);

/// Typed field access that reports the offending key on mismatch.
template <typename T>
T require(const json& j, const char* key, ErrorKind kind = ErrorKind::invalid_config) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(kind, std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(kind, std::string("field '") + key + "' has the wrong type: " + e.what());
  }
}

}  // namespace promptset
