#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "promptset/core.hpp"

namespace promptset {

/// 8-bit raster, interleaved channels (1 = gray, 3 = color).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Decodes PNG/JPEG/TIFF. Alpha is dropped; anything but 8-bit samples is a
/// format error.
Image decode_image(std::span<const std::uint8_t> bytes, const std::string& origin);
Image load_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);

struct PreprocessConfig {
  int target_size = 1000;
  double cutoff_low_pct = 2.0;
  double cutoff_high_pct = 2.0;  // measured from the top of the histogram

  void validate() const;
  bool operator==(const PreprocessConfig&) const = default;
};

struct PageRecord {
  std::string page_id;
  std::string source_uri;
  CoordSpace original;
  AffineMap transform;
  std::string preprocessed_image_uri;  // relative to the run directory

  bool operator==(const PageRecord&) const = default;
};

struct ResizeResult {
  Image image;
  AffineMap map;
};

/// Stretches to target_size x target_size with bilinear sampling and
/// half-pixel-center alignment.
ResizeResult resize(const Image& image, const PreprocessConfig& cfg);

/// Per-channel linear stretch between histogram percentile cutoffs.
Image autocontrast(const Image& image, const PreprocessConfig& cfg);

/// Page id used for a source file: its file stem.
std::string page_id_for(const std::filesystem::path& source);

/// resize then autocontrast, written as <run_dir>/preprocessed/<page_id>.png.
PageRecord preprocess_page(const std::filesystem::path& source, const std::filesystem::path& run_dir,
                           const PreprocessConfig& cfg);

}  // namespace promptset
