#include "promptset/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace promptset {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::invalid_config: return "invalid_config";
    case ErrorKind::ingest: return "ingest";
    case ErrorKind::format: return "format";
    case ErrorKind::coord_space: return "coord_space";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::malformed_rle: return "malformed_rle";
    case ErrorKind::empty_prompt: return "empty_prompt";
    case ErrorKind::backend: return "backend";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::fixture_not_found: return "fixture_not_found";
    case ErrorKind::casting: return "casting";
    case ErrorKind::export_failure: return "export";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

std::string_view to_string(Space space) {
  return space == Space::original ? "original" : "preprocessed";
}

Space parse_space(std::string_view text) {
  if (text == "original") return Space::original;
  if (text == "preprocessed") return Space::preprocessed;
  throw Error(ErrorKind::usage, "unknown coordinate space '" + std::string(text) + "'");
}

void CoordSpace::validate() const {
  if (width < 1 || height < 1) {
    throw Error(ErrorKind::dimension, "coordinate space must be at least 1x1, got " +
                                          std::to_string(width) + "x" + std::to_string(height));
  }
}

BBox BBox::make(double x0, double y0, double x1, double y1, Space space) {
  BBox b{x0, y0, x1, y1, space};
  b.validate();
  return b;
}

bool BBox::valid() const noexcept {
  return std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1) && x0 < x1 &&
         y0 < y1;
}

void BBox::validate() const {
  if (!valid()) {
    throw Error(ErrorKind::dimension, "invalid box [" + std::to_string(x0) + "," + std::to_string(y0) + "," +
                                          std::to_string(x1) + "," + std::to_string(y1) + "]");
  }
}

double iou(const BBox& a, const BBox& b) {
  if (a.space != b.space) {
    throw Error(ErrorKind::coord_space, "iou between " + std::string(to_string(a.space)) + " and " +
                                            std::string(to_string(b.space)) + " boxes");
  }
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

void AffineMap::validate() const {
  if (!(std::isfinite(sx) && std::isfinite(sy) && sx > 0 && sy > 0)) {
    throw Error(ErrorKind::dimension, "affine map scales must be positive and finite");
  }
}

BBox map_box(const BBox& box, const AffineMap& map, MapDirection direction) {
  map.validate();
  BBox out = box;
  if (direction == MapDirection::to_original) {
    out.x0 = box.x0 / map.sx;
    out.x1 = box.x1 / map.sx;
    out.y0 = box.y0 / map.sy;
    out.y1 = box.y1 / map.sy;
    out.space = Space::original;
  } else {
    out.x0 = box.x0 * map.sx;
    out.x1 = box.x1 * map.sx;
    out.y0 = box.y0 * map.sy;
    out.y1 = box.y1 * map.sy;
    out.space = Space::preprocessed;
  }
  out.validate();
  return out;
}

BitMask::BitMask(int h, int w, std::uint8_t fill) : height(h), width(w) {
  if (h < 0 || w < 0) throw Error(ErrorKind::dimension, "negative mask dimensions");
  bits.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill ? 1 : 0);
}

std::size_t BitMask::foreground() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void MaskRLE::validate() const {
  if (height < 1 || width < 1) {
    throw Error(ErrorKind::malformed_rle, "RLE mask has empty dimensions");
  }
  const std::uint64_t total =
      std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  const auto expected = static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
  if (total != expected) {
    throw Error(ErrorKind::malformed_rle, "RLE counts sum to " + std::to_string(total) + ", expected " +
                                              std::to_string(expected));
  }
}

std::uint64_t MaskRLE::area() const {
  std::uint64_t fg = 0;
  for (std::size_t i = 1; i < counts.size(); i += 2) fg += counts[i];
  return fg;
}

MaskRLE rle_encode(const BitMask& mask) {
  if (mask.height < 1 || mask.width < 1 ||
      mask.bits.size() != static_cast<std::size_t>(mask.height) * static_cast<std::size_t>(mask.width)) {
    throw Error(ErrorKind::dimension, "cannot encode an empty or inconsistent mask");
  }
  MaskRLE out{mask.height, mask.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int col = 0; col < mask.width; ++col) {
    for (int row = 0; row < mask.height; ++row) {
      const std::uint8_t v = mask.at(row, col) ? 1 : 0;
      if (v != current) {
        out.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  out.counts.push_back(run);
  return out;
}

BitMask rle_decode(const MaskRLE& rle) {
  rle.validate();
  BitMask mask(rle.height, rle.width);
  std::uint64_t pos = 0;
  std::uint8_t value = 0;
  for (const std::uint32_t run : rle.counts) {
    for (std::uint32_t i = 0; i < run; ++i, ++pos) {
      if (value) {
        const auto col = static_cast<int>(pos / static_cast<std::uint64_t>(rle.height));
        const auto row = static_cast<int>(pos % static_cast<std::uint64_t>(rle.height));
        mask.set(row, col, 1);
      }
    }
    value ^= 1;
  }
  return mask;
}

void Detection::validate() const {
  if (!(score >= 0.0 && score <= 1.0)) {
    throw Error(ErrorKind::protocol, "detection score out of [0,1]: " + std::to_string(score));
  }
  box.validate();
  box_preprocessed.validate();
  if (box.space != Space::original || box_preprocessed.space != Space::preprocessed) {
    throw Error(ErrorKind::coord_space, "detection boxes carry the wrong coordinate space tags");
  }
  if (mask) mask->validate();
}

}  // namespace promptset
