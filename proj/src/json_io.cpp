#include "promptset/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace promptset {

double canonical_real(double value) {
  if (!std::isfinite(value)) return value;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  double out = std::strtod(buf, nullptr);
  return out == 0.0 ? 0.0 : out;  // drop negative zero
}

std::string dump_canonical(const json& value) { return value.dump(2) + "\n"; }

json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::format, origin + ": invalid JSON: " + e.what());
  }
}

json box_to_json(const BBox& box) {
  return json::array({canonical_real(box.x0), canonical_real(box.y0), canonical_real(box.x1),
                      canonical_real(box.y1)});
}

BBox box_from_json(const json& j, Space space) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorKind::format, "box must be an array of 4 numbers");
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorKind::format, "box coordinates must be numbers");
  }
  return BBox::make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>(), space);
}

json rle_to_json(const MaskRLE& rle) {
  return json{{"size", json::array({rle.height, rle.width})}, {"counts", rle.counts}};
}

MaskRLE rle_from_json(const json& j) {
  if (!j.is_object() || !j.contains("size") || !j.contains("counts")) {
    throw Error(ErrorKind::malformed_rle, "mask must have 'size' and 'counts'");
  }
  const auto& size = j.at("size");
  const auto& counts = j.at("counts");
  if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() || !size[1].is_number_integer()) {
    throw Error(ErrorKind::malformed_rle, "mask size must be [h, w]");
  }
  if (!counts.is_array()) throw Error(ErrorKind::malformed_rle, "mask counts must be an array");
  MaskRLE rle;
  rle.height = size[0].get<int>();
  rle.width = size[1].get<int>();
  rle.counts.reserve(counts.size());
  for (const auto& c : counts) {
    if (!c.is_number_unsigned() && !(c.is_number_integer() && c.get<long long>() >= 0)) {
      throw Error(ErrorKind::malformed_rle, "mask counts must be non-negative integers");
    }
    rle.counts.push_back(c.get<std::uint32_t>());
  }
  rle.validate();
  return rle;
}

json detection_to_json(const Detection& det) {
  json j{{"id", det.id},
         {"page_id", det.page_id},
         {"class_name", det.class_name},
         {"phrase", det.phrase},
         {"score", canonical_real(det.score)},
         {"box", box_to_json(det.box)},
         {"box_preprocessed", box_to_json(det.box_preprocessed)}};
  j["mask"] = det.mask ? rle_to_json(*det.mask) : json(nullptr);
  return j;
}

Detection detection_from_json(const json& j) {
  Detection det;
  det.id = require<std::string>(j, "id", ErrorKind::format);
  det.page_id = require<std::string>(j, "page_id", ErrorKind::format);
  det.class_name = require<std::string>(j, "class_name", ErrorKind::format);
  det.phrase = require<std::string>(j, "phrase", ErrorKind::format);
  det.score = require<double>(j, "score", ErrorKind::format);
  det.box = box_from_json(j.at("box"), Space::original);
  det.box_preprocessed = box_from_json(j.at("box_preprocessed"), Space::preprocessed);
  if (j.contains("mask") && !j.at("mask").is_null()) det.mask = rle_from_json(j.at("mask"));
  det.validate();
  return det;
}

}  // namespace promptset
