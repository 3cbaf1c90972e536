#include "test_support.hpp"

#include <atomic>
#include <cmath>
#include <random>

#include <unistd.h>

#include "promptset/fsutil.hpp"

namespace testsupport {

using namespace promptset;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("promptset-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Detection make_det(const std::string& page, double score, BBox box, const std::string& cls) {
  Detection d;
  d.page_id = page;
  d.class_name = cls;
  d.phrase = "figure";
  d.score = score;
  d.box = box;
  d.box.space = Space::original;
  d.box_preprocessed = box;
  d.box_preprocessed.space = Space::preprocessed;
  return d;
}

Image gradient_image(int w, int h, int channels) {
  Image img(w, h, channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.at(x, y, c) = static_cast<std::uint8_t>(40 + (x * 7 + y * 3 + c * 11) % 150);
      }
    }
  }
  return img;
}

void write_png(const fs::path& path, const Image& image) { atomic_write_file(path, encode_png(image)); }

void write_detect_fixture(const fs::path& root, const std::string& page_id, const std::string& caption,
                          const std::vector<RawDetection>& dets) {
  atomic_write_file(root / "detect" / (detect_fixture_key(page_id, caption) + ".json"),
                    dump_canonical(wire::detect_response_body(dets)));
}

void write_segment_fixture(const fs::path& root, const std::string& page_id, const std::vector<BBox>& boxes,
                           const std::vector<MaskRLE>& masks) {
  atomic_write_file(root / "segment" / (segment_fixture_key(page_id, boxes) + ".json"),
                    dump_canonical(wire::segment_response_body(masks)));
}

MaskRLE box_mask(const BBox& box, int size) {
  BitMask m(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      if (c + 0.5 >= box.x0 && c + 0.5 < box.x1 && r + 0.5 >= box.y0 && r + 0.5 < box.y1) m.set(r, c, 1);
    }
  }
  return rle_encode(m);
}

fs::path corpus_dir() { return fs::path(PROMPTSET_SOURCE_DIR) / "corpus"; }

}  // namespace testsupport
