#include "promptset/postprocess.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <set>
#include <thread>

#include "promptset/fsutil.hpp"
#include "promptset/log.hpp"

namespace promptset {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

bool nms_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x0 != b.box.x0) return a.box.x0 < b.box.x0;
  if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
  return a.class_name < b.class_name;
}

PageError page_error(const std::string& page_id, const std::string& stage, const Error& e) {
  return PageError{page_id, stage, std::string(to_string(e.kind())), e.what()};
}

std::string detection_id(const std::string& page_id, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", index);
  return page_id + "-" + buf;
}

struct PageDetectResult {
  std::vector<Detection> dets;
  std::optional<PageError> error;
  double detect_s = 0;
  double nms_s = 0;
};

PageDetectResult detect_page(const std::filesystem::path& run_dir, const PageRecord& page, const PromptSuite& suite,
                             Backend& backend, const NmsConfig& nms_cfg, int image_size) {
  PageDetectResult out;
  try {
    const auto png = read_file_bytes(run_dir / page.preprocessed_image_uri);
    std::vector<Detection> pooled;
    const auto t0 = Clock::now();
    for (const auto& group : suite.groups) {
      DetectRequest req{page.page_id, png, image_size, compile_caption(group), group.box_threshold,
                        group.text_threshold};
      for (const auto& raw : threshold_filter(backend.detect(req), group)) {
        Detection d;
        d.page_id = page.page_id;
        d.class_name = group.class_name;
        d.phrase = raw.phrase;
        d.score = canonical_real(raw.score);
        d.box_preprocessed = BBox{canonical_real(raw.box.x0), canonical_real(raw.box.y0),
                                  canonical_real(raw.box.x1), canonical_real(raw.box.y1), Space::preprocessed};
        BBox orig = map_box(d.box_preprocessed, page.transform, MapDirection::to_original);
        d.box = BBox{canonical_real(orig.x0), canonical_real(orig.y0), canonical_real(orig.x1),
                     canonical_real(orig.y1), Space::original};
        pooled.push_back(std::move(d));
      }
    }
    out.detect_s = seconds_since(t0);
    const auto t1 = Clock::now();
    out.dets = nms(pooled, nms_cfg);
    out.nms_s = seconds_since(t1);
  } catch (const Error& e) {
    out.dets.clear();
    out.error = page_error(page.page_id, "detect", e);
    log::error("page_failed", {{"page_id", page.page_id}, {"stage", "detect"}, {"error", e.what()}});
  }
  return out;
}

}  // namespace

const PageRecord* PipelineRun::find_page(const std::string& page_id) const {
  for (const auto& p : pages) {
    if (p.page_id == page_id) return &p;
  }
  return nullptr;
}

void PipelineRun::validate() const {
  for (const auto& d : detections) {
    if (!find_page(d.page_id)) throw Error(ErrorKind::format, "detection " + d.id + " references unknown page");
    if (!suite.find(d.class_name)) {
      throw Error(ErrorKind::format, "detection " + d.id + " has class '" + d.class_name + "' not in the suite");
    }
    d.validate();
  }
}

std::vector<RawDetection> threshold_filter(const std::vector<RawDetection>& dets, const PromptGroup& group) {
  std::vector<RawDetection> out;
  std::copy_if(dets.begin(), dets.end(), std::back_inserter(out),
               [&](const RawDetection& d) { return d.score >= group.box_threshold; });
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  if (dets.empty()) return {};
  for (const auto& d : dets) {
    if (d.page_id != dets.front().page_id) {
      throw Error(ErrorKind::usage, "nms input mixes pages '" + dets.front().page_id + "' and '" + d.page_id + "'");
    }
  }
  std::vector<Detection> order = dets;
  std::stable_sort(order.begin(), order.end(), nms_order);
  std::vector<Detection> kept;
  for (auto& cand : order) {
    const bool keep = std::all_of(kept.begin(), kept.end(),
                                  [&](const Detection& k) { return iou(cand.box, k.box) <= iou_thresh; });
    if (keep) kept.push_back(std::move(cand));
  }
  return kept;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, const NmsConfig& cfg) {
  if (!cfg.per_class) return nms(dets, cfg.iou_thresh);
  std::map<std::string, std::vector<Detection>> by_class;
  for (const auto& d : dets) by_class[d.class_name].push_back(d);
  std::vector<Detection> out;
  for (auto& [cls, group] : by_class) {
    auto kept = nms(group, cfg.iou_thresh);
    out.insert(out.end(), std::make_move_iterator(kept.begin()), std::make_move_iterator(kept.end()));
  }
  std::stable_sort(out.begin(), out.end(), nms_order);
  return out;
}

void sort_detections(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.page_id != b.page_id) return a.page_id < b.page_id;
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x0 != b.box.x0) return a.box.x0 < b.box.x0;
    if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
    if (a.class_name != b.class_name) return a.class_name < b.class_name;
    return a.phrase < b.phrase;
  });
}

PipelineRun run_pipeline(const std::filesystem::path& run_dir, std::vector<PageRecord> pages,
                         const PromptSuite& suite, Backend& backend, const PipelineOptions& options) {
  suite.validate();
  PipelineRun run;
  run.suite = suite;
  run.nms = options.nms;
  run.pages = std::move(pages);
  std::sort(run.pages.begin(), run.pages.end(),
            [](const PageRecord& a, const PageRecord& b) { return a.page_id < b.page_id; });

  std::vector<PageDetectResult> results(run.pages.size());
  parallel_for(run.pages.size(), options.workers, [&](std::size_t i) {
    const auto& page = run.pages[i];
    if (options.cancel && options.cancel->load()) {
      results[i].error = PageError{page.page_id, "detect", "cancelled", "interrupted before processing"};
      return;
    }
    // Preprocessed side length follows from the recorded scale.
    const int image_size = static_cast<int>(std::lround(page.transform.sx * page.original.width));
    results[i] = detect_page(run_dir, page, suite, backend, options.nms, image_size);
  });

  double detect_s = 0, nms_s = 0;
  for (auto& r : results) {
    detect_s += r.detect_s;
    nms_s += r.nms_s;
    if (r.error) run.errors.push_back(*r.error);
    run.detections.insert(run.detections.end(), std::make_move_iterator(r.dets.begin()),
                          std::make_move_iterator(r.dets.end()));
  }
  run.timing["detect"] = detect_s;
  run.timing["nms"] = nms_s;

  sort_detections(run.detections);
  std::map<std::string, std::size_t> per_page;
  for (auto& d : run.detections) d.id = detection_id(d.page_id, ++per_page[d.page_id]);

  if (options.segment) segment_run(run, run_dir, backend, options.workers, options.cancel);
  return run;
}

void segment_run(PipelineRun& run, const std::filesystem::path& run_dir, Backend& backend, int workers,
                 const std::atomic<bool>* cancel) {
  std::map<std::string, std::vector<std::size_t>> by_page;
  for (std::size_t i = 0; i < run.detections.size(); ++i) by_page[run.detections[i].page_id].push_back(i);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> jobs(by_page.begin(), by_page.end());

  std::vector<std::optional<PageError>> errors(jobs.size());
  std::vector<double> elapsed(jobs.size(), 0.0);
  std::vector<std::vector<MaskRLE>> masks(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t j) {
    const auto& [page_id, indices] = jobs[j];
    if (cancel && cancel->load()) {
      errors[j] = PageError{page_id, "segment", "cancelled", "interrupted before processing"};
      return;
    }
    try {
      const PageRecord* page = run.find_page(page_id);
      if (!page) throw Error(ErrorKind::format, "detections reference unknown page " + page_id);
      SegmentRequest req;
      req.page_id = page_id;
      req.image_png = read_file_bytes(run_dir / page->preprocessed_image_uri);
      req.image_size = static_cast<int>(std::lround(page->transform.sx * page->original.width));
      for (std::size_t i : indices) req.boxes.push_back(run.detections[i].box_preprocessed);
      const auto t0 = Clock::now();
      masks[j] = backend.segment(req);
      elapsed[j] = seconds_since(t0);
    } catch (const Error& e) {
      errors[j] = page_error(page_id, "segment", e);
      log::error("page_failed", {{"page_id", page_id}, {"stage", "segment"}, {"error", e.what()}});
    }
  });

  double total = 0;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    total += elapsed[j];
    if (errors[j]) {
      run.errors.push_back(*errors[j]);
      continue;
    }
    const auto& indices = jobs[j].second;
    for (std::size_t k = 0; k < indices.size(); ++k) run.detections[indices[k]].mask = std::move(masks[j][k]);
  }
  run.timing["segment"] = total;
}

}  // namespace promptset
