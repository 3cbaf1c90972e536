#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "promptset/dataset_io.hpp"
#include "promptset/fsutil.hpp"
#include "test_support.hpp"

using namespace promptset;
using testsupport::make_det;
using testsupport::TempDir;

namespace {

BBox orig(double x0, double y0, double x1, double y1) { return BBox{x0, y0, x1, y1, Space::original}; }

json coco_doc(const json& annotations) {
  return {{"images", {{{"id", 1}, {"file_name", "scans/page-a.png"}, {"width", 200}, {"height", 100}},
                      {{"id", 2}, {"file_name", "page-b.jpg"}, {"width", 50}, {"height", 50}}}},
          {"categories", {{{"id", 7}, {"name", "Initial"}}}},
          {"annotations", annotations}};
}

// Run with real source images on disk: pages 200x100 and 120x160, preprocessed to 100.
PipelineRun sample_run(const fs::path& dir, int n_dets_per_page = 2) {
  PipelineRun run;
  run.run_id = dir.filename().string();
  run.created_at = "2026-01-01T00:00:00Z";
  run.suite = PromptSuite{"s", {PromptGroup{"visual_element", {"figure"}}}, 0.5};
  run.backend.fixture_root = "fx";
  const std::vector<std::pair<int, int>> sizes{{200, 100}, {120, 160}};
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto [w, h] = sizes[i];
    PageRecord p;
    p.page_id = "page" + std::to_string(i);
    p.source_uri = (dir / "src" / (p.page_id + ".png")).string();
    testsupport::write_png(p.source_uri, testsupport::gradient_image(w, h, 3));
    p.original = CoordSpace{Space::original, w, h};
    // Stored values are rounded to 9 significant digits; start from rounded ones.
    p.transform = AffineMap{canonical_real(100.0 / w), canonical_real(100.0 / h)};
    p.preprocessed_image_uri = "preprocessed/" + p.page_id + ".png";
    testsupport::write_png(dir / p.preprocessed_image_uri, testsupport::gradient_image(100, 100, 3));
    run.pages.push_back(p);
    for (int k = 0; k < n_dets_per_page; ++k) {
      const BBox pre{10.0 + 20 * k, 10.0 + 20 * k, 30.0 + 20 * k + 0.5, 40.0 + 20 * k + 0.25, Space::preprocessed};
      Detection d = make_det(p.page_id, canonical_real(0.9 - 0.1 * k), map_box(pre, p.transform, MapDirection::to_original));
      d.box = BBox{canonical_real(d.box.x0), canonical_real(d.box.y0), canonical_real(d.box.x1),
                   canonical_real(d.box.y1), Space::original};
      d.box_preprocessed = pre;
      d.id = p.page_id + "-00" + std::to_string(k + 1);
      d.phrase = "figure";
      d.mask = testsupport::box_mask(pre, 100);
      run.detections.push_back(d);
    }
  }
  run.errors.push_back(PageError{"page9", "detect", "backend", "down"});
  run.timing = {{"detect", 1.25}};
  return run;
}

}  // namespace

TEST(CocoTest, XywhBecomesCorners) {
  const auto gt = coco_from_json(
      coco_doc({{{"id", 1}, {"image_id", 1}, {"category_id", 7}, {"bbox", {10, 20, 30, 40}}}}), "mem");
  ASSERT_EQ(gt.boxes.size(), 1u);
  EXPECT_EQ(gt.boxes[0].box, orig(10, 20, 40, 60));
  EXPECT_EQ(gt.boxes[0].page_id, "page-a");
  EXPECT_EQ(gt.boxes[0].class_name, "Initial");
  EXPECT_EQ(gt.page_ids, (std::vector<std::string>{"page-a", "page-b"}));
  EXPECT_EQ(gt.categories, std::vector<std::string>{"Initial"});
}

TEST(CocoTest, EmptyAnnotationsAndErrors) {
  const auto gt = coco_from_json(coco_doc(json::array()), "mem");
  EXPECT_TRUE(gt.boxes.empty());
  EXPECT_EQ(gt.page_ids.size(), 2u);

  const std::vector<json> bad{
      coco_doc({{{"id", 1}, {"image_id", 99}, {"category_id", 7}, {"bbox", {0, 0, 1, 1}}}}),
      coco_doc({{{"id", 1}, {"image_id", 1}, {"category_id", 8}, {"bbox", {0, 0, 1, 1}}}}),
      coco_doc({{{"id", 1}, {"image_id", 1}, {"category_id", 7}, {"bbox", {0, 0, 0, 1}}}}),
      coco_doc({{{"id", 1}, {"image_id", 1}, {"category_id", 7}, {"bbox", {0, 0, 1}}}}),
      json::array(),
  };
  for (const auto& j : bad) {
    try {
      coco_from_json(j, "mem");
      ADD_FAILURE() << j.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::ingest) << j.dump();
    }
  }
  TempDir tmp;
  atomic_write_file(tmp / "gt.json", std::string_view("{not json"));
  try {
    load_coco(tmp / "gt.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ingest);
  }
  EXPECT_THROW(load_coco(tmp / "missing.json"), Error);
}

TEST(RunDirTest, PersistLoadRoundTripAndByteStable) {
  TempDir tmp;
  const fs::path dir = tmp / "run1";
  const PipelineRun run = sample_run(dir);
  persist_run(run, dir);
  ASSERT_TRUE(is_run_dir(dir));
  const PipelineRun back = load_run(dir);
  EXPECT_EQ(back, run);

  const auto before = read_file_text(dir / "detections.json");
  const auto manifest = read_file_text(dir / "manifest.json");
  persist_run(back, dir);
  EXPECT_EQ(read_file_text(dir / "detections.json"), before);
  EXPECT_EQ(read_file_text(dir / "manifest.json"), manifest);
  EXPECT_FALSE(is_run_dir(tmp / "nothing"));
  EXPECT_THROW(load_run(tmp / "nothing"), Error);
}

TEST(RunDirTest, WriterDyingMidFileLeavesPreviousRunIntact) {
  TempDir tmp;
  const fs::path dir = tmp / "run";
  const PipelineRun first = sample_run(dir, 1);
  persist_run(first, dir);
  const auto detections_before = read_file_text(dir / "detections.json");

  // Large enough that the detections file is written in several chunks.
  PipelineRun second = sample_run(dir, 1);
  for (int i = 0; i < 400; ++i) {
    auto d = second.detections.front();
    d.id = "page0-" + std::to_string(1000 + i);
    second.detections.push_back(d);
  }
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    promptset::testing::set_write_fault_hook([](std::size_t written) {
      if (written >= 64 * 1024) _exit(42);
    });
    persist_run(second, dir);
    _exit(0);
  }
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  ASSERT_EQ(WEXITSTATUS(status), 42);

  EXPECT_EQ(read_file_text(dir / "detections.json"), detections_before);
  EXPECT_EQ(load_run(dir), first);

  // Crashing before anything exists leaves no run directory behind.
  const fs::path fresh = tmp / "fresh";
  const pid_t pid2 = fork();
  ASSERT_GE(pid2, 0);
  if (pid2 == 0) {
    promptset::testing::set_write_fault_hook([](std::size_t) { _exit(42); });
    persist_run(second, fresh);
    _exit(0);
  }
  waitpid(pid2, &status, 0);
  EXPECT_FALSE(is_run_dir(fresh));
  EXPECT_FALSE(fs::exists(fresh / "detections.json"));
}

TEST(DecisionsTest, LatestWinsAndTornLineSkipped) {
  TempDir tmp;
  append_decision(tmp.path(), {"a", ReviewStatus::accepted, "r1", "t1"});
  append_decision(tmp.path(), {"b", ReviewStatus::accepted, "r1", "t2"});
  append_decision(tmp.path(), {"a", ReviewStatus::rejected, "r2", "t3"});
  {
    std::ofstream out(decisions_path(tmp.path()), std::ios::app);
    out << R"({"detection_id":"b","status":"rej)";
  }
  const auto log = read_decisions(decisions_path(tmp.path()));
  ASSERT_EQ(log.size(), 3u);
  const auto latest = latest_status(log);
  EXPECT_EQ(latest.at("a"), ReviewStatus::rejected);
  EXPECT_EQ(latest.at("b"), ReviewStatus::accepted);
  EXPECT_TRUE(read_decisions(tmp / "none.jsonl").empty());
  EXPECT_THROW(parse_review_status("maybe"), Error);
}

TEST(ExportTest, CropWindowFloorsAndCeils) {
  EXPECT_EQ(crop_window(orig(10.2, 20.7, 99.9, 150.1), 1000, 1000), (std::array<int, 4>{10, 20, 100, 151}));
  EXPECT_EQ(crop_window(orig(-5, -5, 2000, 20), 100, 100), (std::array<int, 4>{0, 0, 100, 20}));
}

TEST(ExportTest, RejectedSkippedAndReingestWithinHalfPixel) {
  TempDir tmp;
  const fs::path dir = tmp / "run";
  PipelineRun run = sample_run(dir);
  run.detections.pop_back();  // three detections
  ASSERT_EQ(run.detections.size(), 3u);
  const std::map<std::string, ReviewStatus> decisions{{run.detections[0].id, ReviewStatus::rejected},
                                                      {run.detections[1].id, ReviewStatus::accepted}};
  const auto bundle = export_dataset(run, decisions, tmp / "out");
  EXPECT_EQ(bundle.exported_ids, (std::vector<std::string>{run.detections[1].id, run.detections[2].id}));
  EXPECT_EQ(bundle.crops, 2u);
  EXPECT_EQ(bundle.masks, 2u);

  const json coco = parse_json(read_file_text(bundle.coco_path), "coco");
  const GroundTruth back = load_coco(bundle.coco_path);
  ASSERT_EQ(back.boxes.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const Detection& d = run.detections[i + 1];
    EXPECT_EQ(back.boxes[i].page_id, d.page_id);
    EXPECT_LE(std::abs(back.boxes[i].box.x0 - d.box.x0), 0.5);
    EXPECT_LE(std::abs(back.boxes[i].box.y0 - d.box.y0), 0.5);
    EXPECT_LE(std::abs(back.boxes[i].box.x1 - d.box.x1), 0.5);
    EXPECT_LE(std::abs(back.boxes[i].box.y1 - d.box.y1), 0.5);

    const auto& ann = coco.at("annotations")[i];
    const MaskRLE rle = rle_from_json(ann.at("segmentation"));
    const PageRecord* page = run.find_page(d.page_id);
    EXPECT_EQ(rle.height, page->original.height);
    EXPECT_EQ(rle.width, page->original.width);
    EXPECT_GT(rle.area(), 0u);

    const auto win = crop_window(d.box, page->original.width, page->original.height);
    const Image crop = load_image(tmp / "out" / "crops" / (d.id + ".png"));
    EXPECT_EQ(crop.width, win[2] - win[0]);
    EXPECT_EQ(crop.height, win[3] - win[1]);
    EXPECT_EQ(crop.channels, 3);
  }
}

TEST(ExportTest, MissingOriginalIsExportError) {
  TempDir tmp;
  const fs::path dir = tmp / "run";
  const PipelineRun run = sample_run(dir);
  fs::remove(run.pages[1].source_uri);
  try {
    export_dataset(run, {}, tmp / "out");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::export_failure);
    EXPECT_NE(std::string(e.what()).find("page1"), std::string::npos);
  }
  // Rejecting everything on that page makes the export possible.
  std::map<std::string, ReviewStatus> reject;
  for (const auto& d : run.detections) {
    if (d.page_id == "page1") reject[d.id] = ReviewStatus::rejected;
  }
  EXPECT_EQ(export_dataset(run, reject, tmp / "out").exported_ids.size(), 2u);
}

TEST(ExportProperty, MaskToOriginalCoversMappedBox) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> dim(20, 300);
  std::uniform_int_distribution<int> corner(0, 60);
  for (int i = 0; i < 50; ++i) {
    PageRecord page;
    page.original = CoordSpace{Space::original, dim(rng), dim(rng)};
    page.transform = AffineMap{100.0 / page.original.width, 100.0 / page.original.height};
    const int x0 = corner(rng), y0 = corner(rng);
    const BBox pre{static_cast<double>(x0), static_cast<double>(y0), x0 + 30.0, y0 + 30.0, Space::preprocessed};
    const BitMask full = mask_to_original(testsupport::box_mask(pre, 100), page);
    const BBox o = map_box(pre, page.transform, MapDirection::to_original);
    // Every set pixel centre lies inside the original-space box.
    for (int y = 0; y < full.height; ++y) {
      for (int x = 0; x < full.width; ++x) {
        if (!full.at(y, x)) continue;
        ASSERT_GE(x + 0.5, o.x0 - 1e-9);
        ASSERT_LE(x + 0.5, o.x1 + 1e-9);
        ASSERT_GE(y + 0.5, o.y0 - 1e-9);
        ASSERT_LE(y + 0.5, o.y1 + 1e-9);
      }
    }
    ASSERT_GT(full.foreground(), 0u);
  }
}
