#include "promptset/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "promptset/fsutil.hpp"
#include "promptset/log.hpp"

#ifndef PROMPTSET_VERSION
#define PROMPTSET_VERSION "0.0.0"
#endif

namespace promptset {

std::string_view tool_version() { return PROMPTSET_VERSION; }

// ---------------------------------------------------------------- COCO

GroundTruth coco_from_json(const json& j, const std::string& origin) {
  const auto fail = [&](const std::string& what) -> Error { return Error(ErrorKind::ingest, origin + ": " + what); };
  if (!j.is_object()) throw fail("COCO file must be a JSON object");
  if (!j.contains("images") || !j.at("images").is_array()) throw fail("missing 'images' array");
  if (!j.contains("categories") || !j.at("categories").is_array()) throw fail("missing 'categories' array");

  GroundTruth gt;
  std::map<long long, std::string> images;
  std::set<std::string> seen_pages;
  for (const auto& img : j.at("images")) {
    if (!img.is_object() || !img.contains("id") || !img.contains("file_name")) {
      throw fail("image entries need id and file_name");
    }
    const auto id = img.at("id").get<long long>();
    const auto page = page_id_for(img.at("file_name").get<std::string>());
    if (!images.emplace(id, page).second) throw fail("duplicate image id " + std::to_string(id));
    if (!seen_pages.insert(page).second) throw fail("two images map to page id '" + page + "'");
    gt.page_ids.push_back(page);
  }
  std::map<long long, std::string> categories;
  for (const auto& cat : j.at("categories")) {
    if (!cat.is_object() || !cat.contains("id") || !cat.contains("name")) {
      throw fail("category entries need id and name");
    }
    const auto id = cat.at("id").get<long long>();
    if (!categories.emplace(id, cat.at("name").get<std::string>()).second) {
      throw fail("duplicate category id " + std::to_string(id));
    }
    gt.categories.push_back(cat.at("name").get<std::string>());
  }
  if (j.contains("annotations")) {
    for (const auto& ann : j.at("annotations")) {
      const auto ann_id = ann.value("id", -1LL);
      const std::string ann_name = "annotation " + std::to_string(ann_id);
      if (!ann.contains("image_id") || !ann.contains("category_id") || !ann.contains("bbox")) {
        throw fail(ann_name + " needs image_id, category_id and bbox");
      }
      const auto image_id = ann.at("image_id").get<long long>();
      const auto category_id = ann.at("category_id").get<long long>();
      const auto img = images.find(image_id);
      if (img == images.end()) throw fail(ann_name + " references unknown image_id " + std::to_string(image_id));
      const auto cat = categories.find(category_id);
      if (cat == categories.end()) {
        throw fail(ann_name + " references unknown category_id " + std::to_string(category_id));
      }
      const auto& bbox = ann.at("bbox");
      if (!bbox.is_array() || bbox.size() != 4) throw fail(ann_name + " bbox must be [x, y, w, h]");
      const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
      const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
      BBox box{x, y, x + w, y + h, Space::original};
      if (!box.valid()) throw fail(ann_name + " has an empty or non-finite bbox");
      gt.boxes.push_back(GtBox{img->second, cat->second, box});
    }
  }
  return gt;
}

GroundTruth load_coco(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file_text(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::ingest, e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ingest, path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return coco_from_json(j, path.string());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ingest, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- run files

json preprocess_config_to_json(const PreprocessConfig& cfg) {
  return {{"target_size", cfg.target_size},
          {"cutoff_low_pct", canonical_real(cfg.cutoff_low_pct)},
          {"cutoff_high_pct", canonical_real(cfg.cutoff_high_pct)}};
}

PreprocessConfig preprocess_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::invalid_config, "preprocess config must be an object");
  PreprocessConfig cfg;
  for (const auto& [k, v] : j.items()) {
    if (k == "target_size") {
      cfg.target_size = require<int>(j, "target_size");
    } else if (k == "cutoff_low_pct") {
      cfg.cutoff_low_pct = require<double>(j, "cutoff_low_pct");
    } else if (k == "cutoff_high_pct") {
      cfg.cutoff_high_pct = require<double>(j, "cutoff_high_pct");
    } else {
      throw Error(ErrorKind::invalid_config, "unknown preprocess key '" + k + "'");
    }
  }
  cfg.validate();
  return cfg;
}

json nms_config_to_json(const NmsConfig& cfg) {
  return {{"iou_thresh", canonical_real(cfg.iou_thresh)}, {"per_class", cfg.per_class}};
}

NmsConfig nms_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::invalid_config, "nms config must be an object");
  NmsConfig cfg;
  for (const auto& [k, v] : j.items()) {
    if (k == "iou_thresh") {
      cfg.iou_thresh = require<double>(j, "iou_thresh");
    } else if (k == "per_class") {
      cfg.per_class = require<bool>(j, "per_class");
    } else {
      throw Error(ErrorKind::invalid_config, "unknown nms key '" + k + "'");
    }
  }
  if (!(cfg.iou_thresh > 0 && cfg.iou_thresh < 1)) throw Error(ErrorKind::invalid_config, "nms iou_thresh must lie in (0,1)");
  return cfg;
}

json page_to_json(const PageRecord& p) {
  return {{"page_id", p.page_id},
          {"source_uri", p.source_uri},
          {"original", {{"width", p.original.width}, {"height", p.original.height}}},
          {"transform", {{"sx", canonical_real(p.transform.sx)}, {"sy", canonical_real(p.transform.sy)}}},
          {"preprocessed_image_uri", p.preprocessed_image_uri}};
}

PageRecord page_from_json(const json& j) {
  PageRecord p;
  p.page_id = require<std::string>(j, "page_id", ErrorKind::format);
  p.source_uri = require<std::string>(j, "source_uri", ErrorKind::format);
  const auto& orig = j.at("original");
  p.original = CoordSpace{Space::original, require<int>(orig, "width", ErrorKind::format),
                          require<int>(orig, "height", ErrorKind::format)};
  p.original.validate();
  const auto& tr = j.at("transform");
  p.transform = AffineMap{require<double>(tr, "sx", ErrorKind::format), require<double>(tr, "sy", ErrorKind::format)};
  p.transform.validate();
  p.preprocessed_image_uri = require<std::string>(j, "preprocessed_image_uri", ErrorKind::format);
  return p;
}

json manifest_to_json(const PipelineRun& run) {
  json pages = json::array();
  for (const auto& p : run.pages) pages.push_back(page_to_json(p));
  json j{{"run_id", run.run_id},
         {"created_at", run.created_at},
         {"tool_version", tool_version()},
         {"config",
          {{"suite", run.suite.groups.empty() ? json(nullptr) : suite_to_json(run.suite)},
           {"backend", descriptor_to_json(run.backend)},
           {"preprocess", preprocess_config_to_json(run.preprocess)},
           {"nms", nms_config_to_json(run.nms)}}},
         {"pages", pages}};
  j["parent_run"] = run.parent_run ? json(*run.parent_run) : json(nullptr);
  j["session_id"] = run.session_id ? json(*run.session_id) : json(nullptr);
  return j;
}

json detections_to_json(const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) arr.push_back(detection_to_json(d));
  return {{"detections", arr}};
}

json errors_to_json(const std::vector<PageError>& errors) {
  json arr = json::array();
  for (const auto& e : errors) {
    arr.push_back({{"page_id", e.page_id}, {"stage", e.stage}, {"kind", e.kind}, {"message", e.message}});
  }
  return {{"errors", arr}};
}

void persist_run(const PipelineRun& run, const std::filesystem::path& run_dir) {
  RunLock lock(run_dir);
  json timing = json::object();
  for (const auto& [stage, seconds] : run.timing) timing[stage] = canonical_real(seconds);
  atomic_write_file(run_dir / "detections.json", dump_canonical(detections_to_json(run.detections)));
  atomic_write_file(run_dir / "errors.json", dump_canonical(errors_to_json(run.errors)));
  atomic_write_file(run_dir / "timing.json", dump_canonical(timing));
  // Manifest last: its presence marks a complete run directory.
  atomic_write_file(run_dir / "manifest.json", dump_canonical(manifest_to_json(run)));
}

bool is_run_dir(const std::filesystem::path& dir) { return std::filesystem::is_regular_file(dir / "manifest.json"); }

PipelineRun load_run(const std::filesystem::path& run_dir) {
  if (!is_run_dir(run_dir)) throw Error(ErrorKind::usage, run_dir.string() + " is not a run directory");
  const auto read = [&](const char* name) { return parse_json(read_file_text(run_dir / name), (run_dir / name).string()); };
  PipelineRun run;
  try {
    const json m = read("manifest.json");
    run.run_id = require<std::string>(m, "run_id", ErrorKind::format);
    run.created_at = m.value("created_at", std::string());
    const auto& cfg = m.at("config");
    if (!cfg.at("suite").is_null()) run.suite = suite_from_json(cfg.at("suite"));
    run.backend = descriptor_from_json(cfg.at("backend"));
    run.preprocess = preprocess_config_from_json(cfg.at("preprocess"));
    run.nms = nms_config_from_json(cfg.at("nms"));
    for (const auto& p : m.at("pages")) run.pages.push_back(page_from_json(p));
    if (m.contains("parent_run") && !m.at("parent_run").is_null()) run.parent_run = m.at("parent_run").get<std::string>();
    if (m.contains("session_id") && !m.at("session_id").is_null()) run.session_id = m.at("session_id").get<std::string>();

    if (std::filesystem::exists(run_dir / "detections.json")) {
      const json dets = read("detections.json");
      for (const auto& d : dets.at("detections")) run.detections.push_back(detection_from_json(d));
    }
    if (std::filesystem::exists(run_dir / "errors.json")) {
      const json errors = read("errors.json");
      for (const auto& e : errors.at("errors")) {
        run.errors.push_back(PageError{e.at("page_id"), e.at("stage"), e.at("kind"), e.at("message")});
      }
    }
    if (std::filesystem::exists(run_dir / "timing.json")) {
      const json timing = read("timing.json");
      for (const auto& [stage, seconds] : timing.items()) run.timing[stage] = seconds.get<double>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, run_dir.string() + ": malformed run files: " + e.what());
  }
  run.validate();
  return run;
}

// ---------------------------------------------------------------- decisions

std::string_view to_string(ReviewStatus status) {
  return status == ReviewStatus::accepted ? "accepted" : "rejected";
}

ReviewStatus parse_review_status(std::string_view text) {
  if (text == "accepted") return ReviewStatus::accepted;
  if (text == "rejected") return ReviewStatus::rejected;
  throw Error(ErrorKind::usage, "status must be 'accepted' or 'rejected', got '" + std::string(text) + "'");
}

json decision_to_json(const ReviewDecision& d) {
  return {{"detection_id", d.detection_id},
          {"status", to_string(d.status)},
          {"reviewer", d.reviewer},
          {"timestamp", d.timestamp}};
}

ReviewDecision decision_from_json(const json& j) {
  ReviewDecision d;
  d.detection_id = require<std::string>(j, "detection_id", ErrorKind::format);
  d.status = parse_review_status(require<std::string>(j, "status", ErrorKind::format));
  d.reviewer = j.value("reviewer", std::string());
  d.timestamp = j.value("timestamp", std::string());
  return d;
}

std::filesystem::path decisions_path(const std::filesystem::path& run_dir) { return run_dir / "decisions.jsonl"; }

void append_decision(const std::filesystem::path& run_dir, const ReviewDecision& decision) {
  append_line(decisions_path(run_dir), decision_to_json(decision).dump());
}

std::vector<ReviewDecision> read_decisions(const std::filesystem::path& path) {
  std::vector<ReviewDecision> out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(read_file_text(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(decision_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      log::warn("decision_line_skipped", {{"path", path.string()}, {"line", lineno}, {"error", e.what()}});
    }
  }
  return out;
}

std::map<std::string, ReviewStatus> latest_status(const std::vector<ReviewDecision>& log) {
  std::map<std::string, ReviewStatus> out;
  for (const auto& d : log) out[d.detection_id] = d.status;
  return out;
}

// ---------------------------------------------------------------- export

std::array<int, 4> crop_window(const BBox& box, int width, int height) {
  const auto clampi = [](double v, int hi) { return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi))); };
  return {clampi(std::floor(box.x0), width), clampi(std::floor(box.y0), height), clampi(std::ceil(box.x1), width),
          clampi(std::ceil(box.y1), height)};
}

BitMask mask_to_original(const MaskRLE& mask, const PageRecord& page) {
  const BitMask pre = rle_decode(mask);
  BitMask out(page.original.height, page.original.width);
  std::vector<int> src_col(static_cast<std::size_t>(page.original.width));
  for (int x = 0; x < page.original.width; ++x) {
    src_col[x] = std::min(static_cast<int>(std::floor((x + 0.5) * page.transform.sx)), pre.width - 1);
  }
  for (int y = 0; y < page.original.height; ++y) {
    const int sy = std::min(static_cast<int>(std::floor((y + 0.5) * page.transform.sy)), pre.height - 1);
    for (int x = 0; x < page.original.width; ++x) {
      if (pre.at(sy, src_col[x])) out.set(y, x, 1);
    }
  }
  return out;
}

ExportBundle export_dataset(const PipelineRun& run, const std::map<std::string, ReviewStatus>& decisions,
                            const std::filesystem::path& out_root) {
  std::vector<const Detection*> accepted;
  for (const auto& d : run.detections) {
    auto it = decisions.find(d.id);
    if (it == decisions.end() || it->second == ReviewStatus::accepted) accepted.push_back(&d);
  }

  std::set<std::string> needed;
  for (const auto* d : accepted) needed.insert(d->page_id);
  std::vector<std::string> missing;
  for (const auto& page_id : needed) {
    const PageRecord* page = run.find_page(page_id);
    if (!page || !std::filesystem::is_regular_file(page->source_uri)) missing.push_back(page_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(ErrorKind::export_failure, "original images missing for pages: " + list);
  }

  ExportBundle bundle;
  bundle.output_root = out_root;
  bundle.coco_path = out_root / "annotations.json";
  std::filesystem::remove_all(out_root / "crops");
  std::filesystem::remove_all(out_root / "masks");
  std::filesystem::create_directories(out_root / "crops");
  std::filesystem::create_directories(out_root / "masks");

  json images = json::array();
  std::map<std::string, int> image_ids;
  for (const auto& page : run.pages) {
    const int id = static_cast<int>(image_ids.size()) + 1;
    image_ids[page.page_id] = id;
    images.push_back({{"id", id},
                      {"file_name", std::filesystem::path(page.source_uri).filename().string()},
                      {"width", page.original.width},
                      {"height", page.original.height}});
  }
  json categories = json::array();
  std::map<std::string, int> category_ids;
  for (const auto& g : run.suite.groups) {
    const int id = static_cast<int>(category_ids.size()) + 1;
    category_ids[g.class_name] = id;
    categories.push_back({{"id", id}, {"name", g.class_name}});
  }

  json annotations = json::array();
  std::map<std::string, Image> originals;
  for (const auto* d : accepted) {
    const PageRecord& page = *run.find_page(d->page_id);
    auto [it, inserted] = originals.try_emplace(page.page_id);
    if (inserted) it->second = load_image(page.source_uri);
    const Image& original = it->second;

    const auto [cx0, cy0, cx1, cy1] = crop_window(d->box, original.width, original.height);
    json ann{{"id", static_cast<int>(annotations.size()) + 1},
             {"image_id", image_ids.at(page.page_id)},
             {"category_id", category_ids.at(d->class_name)},
             {"bbox", {canonical_real(d->box.x0), canonical_real(d->box.y0), canonical_real(d->box.width()),
                       canonical_real(d->box.height())}},
             {"area", canonical_real(d->box.area())},
             {"iscrowd", 0},
             {"score", canonical_real(d->score)},
             {"phrase", d->phrase},
             {"detection_id", d->id}};

    if (cx1 > cx0 && cy1 > cy0) {
      Image crop(cx1 - cx0, cy1 - cy0, original.channels);
      for (int y = cy0; y < cy1; ++y) {
        for (int x = cx0; x < cx1; ++x) {
          for (int c = 0; c < original.channels; ++c) crop.at(x - cx0, y - cy0, c) = original.at(x, y, c);
        }
      }
      atomic_write_file(out_root / "crops" / (d->id + ".png"), encode_png(crop));
      ++bundle.crops;
    }

    if (d->mask) {
      const BitMask full = mask_to_original(*d->mask, page);
      const MaskRLE rle = rle_encode(full);
      ann["segmentation"] = rle_to_json(rle);
      if (cx1 > cx0 && cy1 > cy0) {
        Image window(cx1 - cx0, cy1 - cy0, 1);
        for (int y = cy0; y < cy1; ++y) {
          for (int x = cx0; x < cx1; ++x) window.at(x - cx0, y - cy0) = full.at(y, x) ? 255 : 0;
        }
        atomic_write_file(out_root / "masks" / (d->id + ".png"), encode_png(window));
        ++bundle.masks;
      }
    }
    annotations.push_back(std::move(ann));
    bundle.exported_ids.push_back(d->id);
  }

  json coco{{"info", {{"description", "exported from run " + run.run_id}, {"version", tool_version()}}},
            {"images", images},
            {"annotations", annotations},
            {"categories", categories}};
  atomic_write_file(bundle.coco_path, dump_canonical(coco));
  return bundle;
}

}  // namespace promptset
