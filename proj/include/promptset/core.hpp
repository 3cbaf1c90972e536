#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "promptset/errors.hpp"

namespace promptset {

enum class Space { original, preprocessed };

std::string_view to_string(Space space);
Space parse_space(std::string_view text);

/// Pixel extent of one coordinate space.
struct CoordSpace {
  Space tag = Space::original;
  int width = 1;
  int height = 1;

  void validate() const;
  bool operator==(const CoordSpace&) const = default;
};

/// Axis-aligned box in corner form (x0, y0, x1, y1), continuous pixel
/// coordinates. `space` tags which coordinate frame the corners live in.
struct BBox {
  double x0 = 0;
  double y0 = 0;
  double x1 = 0;
  double y1 = 0;
  Space space = Space::original;

  /// Builds a box and enforces x0 < x1, y0 < y1, all finite.
  static BBox make(double x0, double y0, double x1, double y1, Space space = Space::original);

  bool valid() const noexcept;
  void validate() const;
  double width() const noexcept { return x1 - x0; }
  double height() const noexcept { return y1 - y0; }
  double area() const noexcept { return width() * height(); }

  bool operator==(const BBox&) const = default;
};

/// Intersection over union. Throws coord_space when the boxes live in different frames.
double iou(const BBox& a, const BBox& b);

/// Diagonal scale taking original coordinates to preprocessed coordinates.
struct AffineMap {
  double sx = 1.0;
  double sy = 1.0;

  void validate() const;
  bool operator==(const AffineMap&) const = default;
};

enum class MapDirection { to_original, to_preprocessed };

BBox map_box(const BBox& box, const AffineMap& map, MapDirection direction);

/// Dense binary grid, row-major, one byte per pixel (0 or 1).
struct BitMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BitMask() = default;
  BitMask(int h, int w, std::uint8_t fill = 0);

  std::uint8_t at(int row, int col) const { return bits[static_cast<std::size_t>(row) * width + col]; }
  void set(int row, int col, std::uint8_t value) {
    bits[static_cast<std::size_t>(row) * width + col] = value ? 1 : 0;
  }
  std::size_t foreground() const;

  bool operator==(const BitMask&) const = default;
};

/// COCO-style uncompressed run-length mask: column-major runs that
/// alternate background/foreground, starting with background.
struct MaskRLE {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  /// Throws malformed_rle if the counts do not cover height*width exactly.
  void validate() const;
  std::uint64_t area() const;

  bool operator==(const MaskRLE&) const = default;
};

MaskRLE rle_encode(const BitMask& mask);
BitMask rle_decode(const MaskRLE& rle);

/// One scored, classed, phrase-attributed box on a page.
struct Detection {
  std::string id;
  std::string page_id;
  std::string class_name;
  std::string phrase;
  double score = 0;
  BBox box;               // original space
  BBox box_preprocessed;  // what the detector reported
  std::optional<MaskRLE> mask;  // preprocessed space

  void validate() const;
  bool operator==(const Detection&) const = default;
};

}  // namespace promptset
