// make_corpus: writes the synthetic six-page test corpus.
//
//   make_corpus --out corpus
//
// Output:
//   images/page-0N.png   page rasters, assorted original sizes
//   gt.json              COCO ground truth (ContentIllustration, Initial, PrintersMark)
//   cast.json            all classes -> visual_element
//   fixtures/            recorded detector/segmenter responses for the
//                        chapbook-v1 ({figure}) and chapbook-v2 suites
//
// The scripted detector reproduces the failure modes seen with the bare
// {figure} prompt: boxes around human figures inside a woodcut, one box per
// panel of a multi-panel element annotated as a whole, a hit on a text block,
// a missed marginal ornament and a printer's mark scored under threshold.
// The enriched prompt boxes whole elements instead.

#include <cmath>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "promptset/dataset_io.hpp"
#include "promptset/fsutil.hpp"
#include "promptset/log.hpp"

namespace fs = std::filesystem;
using namespace promptset;

namespace {

const cv::Scalar kPaper(198, 220, 232);
const cv::Scalar kInk(40, 52, 60);

struct Rect {
  double x0, y0, x1, y1;
};

struct GtItem {
  Rect box;
  std::string category;
};

struct ScriptedHit {
  Rect box;  // original space
  double score;
  std::string phrase;
};

struct PageSpec {
  std::string id;
  int width, height;
  std::vector<GtItem> gt;
  std::vector<Rect> figures;  // human figures drawn inside illustrations
  std::vector<Rect> text_blocks;
  std::map<std::string, std::vector<ScriptedHit>> hits;  // suite id -> detector output
};

std::vector<PageSpec> pages() {
  std::vector<PageSpec> p;
  // Woodcut with two human figures.
  p.push_back({"page-01", 820, 1180,
               {{{110, 240, 710, 760}, "ContentIllustration"}},
               {{180, 330, 380, 720}, {450, 320, 640, 730}},
               {{110, 820, 710, 1100}, {110, 80, 710, 200}},
               {{"chapbook-v1", {{{180, 330, 380, 720}, 0.64, "figure"}, {{450, 320, 640, 730}, 0.57, "figure"}}},
                {"chapbook-v2", {{{104, 236, 716, 768}, 0.74, "image"}}}}});
  // Decorated initial plus an illustration; {figure} misses the initial.
  p.push_back({"page-02", 900, 1300,
               {{{90, 200, 250, 360}, "Initial"}, {{300, 700, 800, 1150}, "ContentIllustration"}},
               {{480, 760, 620, 1100}},
               {{270, 200, 810, 650}, {90, 400, 250, 650}},
               {{"chapbook-v1", {{{310, 690, 795, 1160}, 0.59, "figure"}}},
                {"chapbook-v2", {{{296, 702, 806, 1146}, 0.81, "image"}, {{86, 196, 256, 366}, 0.47, "square"}}}}});
  // Text only.
  p.push_back({"page-03", 760, 1100,
               {},
               {},
               {{80, 120, 680, 280}, {80, 300, 680, 520}, {80, 540, 680, 1000}},
               {{"chapbook-v1", {{{80, 300, 680, 520}, 0.42, "figure"}}},
                {"chapbook-v2", {{{80, 300, 680, 520}, 0.37, "rectangle"}}}}});
  // Three panels annotated as one element, plus a second illustration.
  // The enriched prompt returns a near-duplicate that NMS must remove.
  p.push_back({"page-04", 1000, 1000,
               {{{100, 150, 900, 450}, "ContentIllustration"}, {{200, 550, 800, 900}, "ContentIllustration"}},
               {{420, 600, 560, 880}},
               {{100, 40, 900, 120}, {100, 920, 900, 980}},
               {{"chapbook-v1",
                 {{{100, 150, 350, 450}, 0.55, "figure"},
                  {{375, 150, 625, 450}, 0.52, "figure"},
                  {{650, 150, 900, 450}, 0.50, "figure"},
                  {{205, 545, 790, 905}, 0.66, "figure"}}},
                {"chapbook-v2",
                 {{{98, 148, 902, 452}, 0.77, "rectangle"},
                  {{105, 155, 895, 445}, 0.69, "image"},
                  {{196, 548, 806, 904}, 0.72, "image"}}}}});
  // Illustration with a figure, plus a small ornament in the margin that
  // neither prompt finds.
  p.push_back({"page-05", 880, 1240,
               {{{120, 180, 760, 700}, "ContentIllustration"}, {{20, 900, 90, 980}, "ContentIllustration"}},
               {{300, 250, 520, 680}},
               {{120, 760, 760, 1180}},
               {{"chapbook-v1", {{{300, 250, 520, 680}, 0.61, "figure"}, {{125, 185, 755, 705}, 0.45, "figure"}}},
                {"chapbook-v2", {{{118, 176, 764, 704}, 0.79, "photo"}}}}});
  // Landscape page with a printer's mark; {figure} scores it under threshold.
  p.push_back({"page-06", 1100, 820,
               {{{450, 300, 650, 520}, "PrintersMark"}},
               {},
               {{150, 60, 950, 240}, {150, 600, 950, 760}},
               {{"chapbook-v1", {{{452, 298, 648, 522}, 0.30, "figure"}}},
                {"chapbook-v2", {{{450, 302, 652, 518}, 0.52, "square"}, {{50, 50, 300, 120}, 0.22, "rectangle"}}}}});
  return p;
}

cv::Rect to_cv(const Rect& r) {
  return cv::Rect(cv::Point(static_cast<int>(r.x0), static_cast<int>(r.y0)),
                  cv::Point(static_cast<int>(r.x1), static_cast<int>(r.y1)));
}

void draw_text_block(cv::Mat& img, const Rect& r, cv::RNG& rng) {
  for (int y = static_cast<int>(r.y0) + 6; y + 10 < r.y1; y += 22) {
    int x = static_cast<int>(r.x0);
    while (x < r.x1 - 20) {
      const int w = rng.uniform(18, 70);
      const int x1 = std::min(x + w, static_cast<int>(r.x1));
      cv::rectangle(img, cv::Point(x, y), cv::Point(x1, y + 10), kInk, cv::FILLED);
      x = x1 + rng.uniform(8, 14);
    }
  }
}

void draw_hatching(cv::Mat& img, const Rect& r, cv::RNG& rng) {
  cv::rectangle(img, to_cv(r), kInk, 4);
  for (int k = 0; k < 40; ++k) {
    const cv::Point a(rng.uniform(static_cast<int>(r.x0) + 6, static_cast<int>(r.x1) - 6),
                      rng.uniform(static_cast<int>(r.y0) + 6, static_cast<int>(r.y1) - 6));
    const cv::Point b(std::clamp(a.x + rng.uniform(-60, 60), static_cast<int>(r.x0) + 6, static_cast<int>(r.x1) - 6),
                      std::clamp(a.y + rng.uniform(-20, 20), static_cast<int>(r.y0) + 6, static_cast<int>(r.y1) - 6));
    cv::line(img, a, b, cv::Scalar(90, 110, 120), 2);
  }
}

void draw_figure(cv::Mat& img, const Rect& r) {
  const int cx = static_cast<int>((r.x0 + r.x1) / 2);
  const int h = static_cast<int>(r.y1 - r.y0);
  const int head = h / 10;
  cv::circle(img, cv::Point(cx, static_cast<int>(r.y0) + head), head, kInk, cv::FILLED);
  cv::ellipse(img, cv::Point(cx, static_cast<int>(r.y0) + h * 4 / 10),
              cv::Size(static_cast<int>((r.x1 - r.x0) / 3), h / 5), 0, 0, 360, cv::Scalar(60, 70, 80), cv::FILLED);
  cv::line(img, cv::Point(cx, static_cast<int>(r.y0) + h * 6 / 10), cv::Point(static_cast<int>(r.x0) + 10, static_cast<int>(r.y1)),
           kInk, 8);
  cv::line(img, cv::Point(cx, static_cast<int>(r.y0) + h * 6 / 10), cv::Point(static_cast<int>(r.x1) - 10, static_cast<int>(r.y1)),
           kInk, 8);
}

void draw_element(cv::Mat& img, const GtItem& item, cv::RNG& rng) {
  const Rect& r = item.box;
  if (item.category == "Initial") {
    cv::rectangle(img, to_cv(r), kInk, 5);
    cv::putText(img, "Q", cv::Point(static_cast<int>(r.x0) + 25, static_cast<int>(r.y1) - 25), cv::FONT_HERSHEY_TRIPLEX,
                4.0, kInk, 8);
  } else if (item.category == "PrintersMark") {
    const cv::Point c(static_cast<int>((r.x0 + r.x1) / 2), static_cast<int>((r.y0 + r.y1) / 2));
    cv::circle(img, c, static_cast<int>((r.x1 - r.x0) / 2) - 4, kInk, 5);
    cv::line(img, cv::Point(c.x, static_cast<int>(r.y0) + 10), cv::Point(c.x, static_cast<int>(r.y1) - 10), kInk, 5);
    cv::line(img, cv::Point(static_cast<int>(r.x0) + 10, c.y), cv::Point(static_cast<int>(r.x1) - 10, c.y), kInk, 5);
  } else if (r.x1 - r.x0 < 120) {
    cv::rectangle(img, to_cv(r), kInk, cv::FILLED);
    cv::circle(img, cv::Point(static_cast<int>((r.x0 + r.x1) / 2), static_cast<int>((r.y0 + r.y1) / 2)), 14, kPaper, 4);
  } else {
    draw_hatching(img, r, rng);
  }
}

cv::Mat render(const PageSpec& page) {
  cv::RNG rng(0x5eed + static_cast<uint64_t>(page.width) * 31 + page.height);
  cv::Mat img(page.height, page.width, CV_8UC3, kPaper);
  // A faint vertical gradient, so autocontrast has work to do.
  for (int y = 0; y < page.height; ++y) {
    const double f = 1.0 - 0.08 * y / page.height;
    for (int x = 0; x < page.width; ++x) {
      auto& px = img.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) px[c] = cv::saturate_cast<uchar>(px[c] * f);
    }
  }
  for (const auto& t : page.text_blocks) draw_text_block(img, t, rng);
  for (const auto& g : page.gt) draw_element(img, g, rng);
  if (page.id == "page-04") {
    // Three panels inside the first element.
    for (int k = 0; k < 3; ++k) {
      const double x0 = 100 + k * 275;
      draw_hatching(img, {x0, 150, x0 + 250, 450}, rng);
    }
  }
  for (const auto& f : page.figures) draw_figure(img, f);
  return img;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

// Replays the scripted hits for a (page, caption) pair; masks are ellipses
// inscribed in each box.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(const std::vector<PageSpec>& specs) {
    for (const auto& p : specs) {
      sizes_[p.id] = {p.width, p.height};
      for (const auto& [suite_id, hits] : p.hits) {
        const auto& suite = builtin_suites().at(suite_id);
        hits_[{p.id, compile_caption(suite.groups.front())}] = hits;
      }
    }
  }

  std::vector<RawDetection> detect(const DetectRequest& req) override {
    std::vector<RawDetection> out;
    const auto it = hits_.find({req.page_id, req.caption});
    if (it == hits_.end()) return out;
    const auto [w, h] = sizes_.at(req.page_id);
    const double sx = static_cast<double>(req.image_size) / w;
    const double sy = static_cast<double>(req.image_size) / h;
    for (const auto& hit : it->second) {
      RawDetection d;
      d.box = BBox{round2(hit.box.x0 * sx), round2(hit.box.y0 * sy), round2(hit.box.x1 * sx), round2(hit.box.y1 * sy),
                   Space::preprocessed};
      d.score = hit.score;
      d.phrase = hit.phrase;
      out.push_back(d);
    }
    return out;
  }

  std::vector<MaskRLE> segment(const SegmentRequest& req) override {
    std::vector<MaskRLE> out;
    for (const auto& b : req.boxes) {
      BitMask m(req.image_size, req.image_size);
      const double cx = (b.x0 + b.x1) / 2, cy = (b.y0 + b.y1) / 2;
      const double rx = (b.x1 - b.x0) / 2, ry = (b.y1 - b.y0) / 2;
      for (int row = 0; row < req.image_size; ++row) {
        for (int col = 0; col < req.image_size; ++col) {
          const double dx = (col + 0.5 - cx) / rx, dy = (row + 0.5 - cy) / ry;
          if (dx * dx + dy * dy <= 1.0) m.set(row, col, 1);
        }
      }
      out.push_back(rle_encode(m));
    }
    return out;
  }

  json health() override { return {{"status", "ok"}, {"kind", "scripted"}}; }

 private:
  std::map<std::string, std::pair<int, int>> sizes_;
  std::map<std::pair<std::string, std::string>, std::vector<ScriptedHit>> hits_;
};

json coco(const std::vector<PageSpec>& specs) {
  const std::vector<std::string> cats{"ContentIllustration", "Initial", "PrintersMark"};
  json images = json::array(), annotations = json::array(), categories = json::array();
  for (std::size_t c = 0; c < cats.size(); ++c) categories.push_back({{"id", c + 1}, {"name", cats[c]}});
  int ann_id = 1;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& p = specs[i];
    images.push_back({{"id", i + 1}, {"file_name", p.id + ".png"}, {"width", p.width}, {"height", p.height}});
    for (const auto& g : p.gt) {
      const auto cat = std::find(cats.begin(), cats.end(), g.category) - cats.begin() + 1;
      const double w = g.box.x1 - g.box.x0, h = g.box.y1 - g.box.y0;
      annotations.push_back({{"id", ann_id++},
                             {"image_id", i + 1},
                             {"category_id", cat},
                             {"bbox", {g.box.x0, g.box.y0, w, h}},
                             {"area", w * h},
                             {"iscrowd", 0}});
    }
  }
  return {{"images", images}, {"annotations", annotations}, {"categories", categories}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic test corpus"};
  std::string out = "corpus";
  app.add_option("--out", out, "output directory");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path root = out;
    const auto specs = pages();
    fs::remove_all(root / "images");
    fs::remove_all(root / "fixtures");
    fs::create_directories(root / "images");
    for (const auto& p : specs) {
      std::vector<uchar> png;
      cv::imencode(".png", render(p), png, {cv::IMWRITE_PNG_COMPRESSION, 9});
      atomic_write_file(root / "images" / (p.id + ".png"), std::span<const std::uint8_t>(png.data(), png.size()));
    }
    atomic_write_file(root / "gt.json", dump_canonical(coco(specs)));
    atomic_write_file(root / "cast.json",
                      dump_canonical({{"ContentIllustration", "visual_element"},
                                      {"Initial", "visual_element"},
                                      {"PrintersMark", "visual_element"}}));

    // Record fixtures by running the real pipeline against the script.
    const fs::path work = root / ".work";
    fs::remove_all(work);
    std::vector<PageRecord> records;
    for (const auto& p : specs) records.push_back(preprocess_page(root / "images" / (p.id + ".png"), work, {}));
    RecordingBackend recorder(std::make_shared<ScriptedBackend>(specs), root / "fixtures");
    for (const char* suite_id : {"chapbook-v1", "chapbook-v2"}) {
      const auto& suite = builtin_suites().at(suite_id);
      PipelineOptions opts;
      opts.nms.iou_thresh = suite.nms_iou;
      run_pipeline(work, records, suite, recorder, opts);
    }
    fs::remove_all(work);
    std::cout << "wrote " << specs.size() << " pages to " << root.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "make_corpus: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
