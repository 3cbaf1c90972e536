#include "promptset/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "promptset/fsutil.hpp"

namespace promptset {

Image::Image(int w, int h, int c, std::uint8_t fill) : width(w), height(h), channels(c) {
  if (w < 1 || h < 1 || (c != 1 && c != 3)) throw Error(ErrorKind::dimension, "invalid image shape");
  pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
}

Image decode_image(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.empty()) throw Error(ErrorKind::ingest, origin + ": empty file");
  const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat mat;
  try {
    mat = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::ingest, origin + ": cannot decode image: " + e.what());
  }
  if (mat.empty() || mat.cols < 1 || mat.rows < 1) {
    throw Error(ErrorKind::ingest, origin + ": cannot decode image");
  }
  if (mat.depth() != CV_8U) {
    throw Error(ErrorKind::format, origin + ": only 8-bit samples are supported");
  }
  int channels = mat.channels();
  if (channels == 4) {
    cv::Mat bgr;
    std::vector<cv::Mat> planes;
    cv::split(mat, planes);
    planes.pop_back();
    cv::merge(planes, bgr);
    mat = bgr;
    channels = 3;
  } else if (channels == 2) {
    std::vector<cv::Mat> planes;
    cv::split(mat, planes);
    mat = planes[0];
    channels = 1;
  }
  if (channels != 1 && channels != 3) {
    throw Error(ErrorKind::format, origin + ": unsupported channel count " + std::to_string(channels));
  }
  Image out(mat.cols, mat.rows, channels);
  const std::size_t row_bytes = static_cast<std::size_t>(mat.cols) * channels;
  for (int y = 0; y < mat.rows; ++y) {
    std::copy_n(mat.ptr<std::uint8_t>(y), row_bytes, out.pixels.begin() + static_cast<std::ptrdiff_t>(y * row_bytes));
  }
  return out;
}

Image load_image(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::ingest, path.string() + ": " + e.what());
  }
  return decode_image(bytes, path.string());
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  const cv::Mat mat(image.height, image.width, image.channels == 1 ? CV_8UC1 : CV_8UC3,
                    const_cast<std::uint8_t*>(image.pixels.data()));
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", mat, out)) throw Error(ErrorKind::io, "PNG encoding failed");
  return out;
}

void PreprocessConfig::validate() const {
  if (target_size < 1) throw Error(ErrorKind::invalid_config, "target_size must be >= 1");
  const auto pct_ok = [](double p) { return std::isfinite(p) && p >= 0 && p < 50; };
  if (!pct_ok(cutoff_low_pct) || !pct_ok(cutoff_high_pct)) {
    throw Error(ErrorKind::invalid_config, "autocontrast cutoffs must lie in [0, 50)");
  }
}

namespace {

// Sample position (d + 0.5) * src / dst - 0.5 is kept as the exact
// fraction num / (2 * dst), so weights are integers over 2 * dst.
struct Tap {
  int lo;
  int hi;
  std::int64_t w_hi;  // weight of `hi`; `lo` gets den - w_hi
};

std::vector<Tap> bilinear_taps(int src, int dst) {
  std::vector<Tap> taps(static_cast<std::size_t>(dst));
  const std::int64_t den = 2 * static_cast<std::int64_t>(dst);
  for (int d = 0; d < dst; ++d) {
    const std::int64_t num = std::max<std::int64_t>(0, (2 * static_cast<std::int64_t>(d) + 1) * src - dst);
    const auto lo = static_cast<int>(num / den);
    if (lo >= src - 1) {
      taps[d] = {src - 1, src - 1, 0};
    } else {
      taps[d] = {lo, lo + 1, num - lo * den};
    }
  }
  return taps;
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
}

}  // namespace

ResizeResult resize(const Image& image, const PreprocessConfig& cfg) {
  cfg.validate();
  if (image.width < 1 || image.height < 1) throw Error(ErrorKind::ingest, "zero-dimension image");
  const int n = cfg.target_size;
  ResizeResult out{Image(n, n, image.channels),
                   AffineMap{static_cast<double>(n) / image.width, static_cast<double>(n) / image.height}};
  const auto xs = bilinear_taps(image.width, n);
  const auto ys = bilinear_taps(image.height, n);
  const std::int64_t den = 2 * static_cast<std::int64_t>(n);
  const std::int64_t den2 = den * den;
  for (int y = 0; y < n; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < n; ++x) {
      const Tap& tx = xs[x];
      for (int c = 0; c < image.channels; ++c) {
        const std::int64_t top = (den - tx.w_hi) * image.at(tx.lo, ty.lo, c) + tx.w_hi * image.at(tx.hi, ty.lo, c);
        const std::int64_t bottom = (den - tx.w_hi) * image.at(tx.lo, ty.hi, c) + tx.w_hi * image.at(tx.hi, ty.hi, c);
        const std::int64_t acc = (den - ty.w_hi) * top + ty.w_hi * bottom;
        // Exact value acc / den2, rounded half up.
        out.image.at(x, y, c) = static_cast<std::uint8_t>((2 * acc + den2) / (2 * den2));
      }
    }
  }
  return out;
}

Image autocontrast(const Image& image, const PreprocessConfig& cfg) {
  cfg.validate();
  Image out = image;
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  const auto cut_lo = static_cast<std::size_t>(std::floor(cfg.cutoff_low_pct / 100.0 * static_cast<double>(n)));
  const auto cut_hi = static_cast<std::size_t>(std::floor(cfg.cutoff_high_pct / 100.0 * static_cast<double>(n)));

  for (int c = 0; c < image.channels; ++c) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t i = 0; i < n; ++i) ++hist[image.pixels[i * image.channels + c]];

    int lo = 0;
    for (std::size_t cum = 0; lo < 256; ++lo) {
      cum += hist[lo];
      if (cum > cut_lo) break;
    }
    int hi = 255;
    for (std::size_t cum = 0; hi >= 0; --hi) {
      cum += hist[hi];
      if (cum > cut_hi) break;
    }
    if (hi <= lo) continue;

    std::array<std::uint8_t, 256> lut{};
    for (int v = 0; v < 256; ++v) lut[v] = to_u8((v - lo) * 255.0 / (hi - lo));
    for (std::size_t i = 0; i < n; ++i) {
      auto& px = out.pixels[i * image.channels + c];
      px = lut[px];
    }
  }
  return out;
}

std::string page_id_for(const std::filesystem::path& source) { return source.stem().string(); }

PageRecord preprocess_page(const std::filesystem::path& source, const std::filesystem::path& run_dir,
                           const PreprocessConfig& cfg) {
  cfg.validate();
  const Image original = load_image(source);
  ResizeResult resized = resize(original, cfg);
  const Image processed = autocontrast(resized.image, cfg);

  PageRecord rec;
  rec.page_id = page_id_for(source);
  rec.source_uri = source.string();
  rec.original = CoordSpace{Space::original, original.width, original.height};
  rec.transform = resized.map;
  rec.preprocessed_image_uri = "preprocessed/" + rec.page_id + ".png";
  atomic_write_file(run_dir / rec.preprocessed_image_uri, encode_png(processed));
  return rec;
}

}  // namespace promptset
