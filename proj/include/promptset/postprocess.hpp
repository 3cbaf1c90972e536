#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "promptset/backend.hpp"
#include "promptset/preprocess.hpp"
#include "promptset/prompt.hpp"

namespace promptset {

struct NmsConfig {
  double iou_thresh = 0.5;
  // Suppress only within a class. Used when groups are competing classes
  // whose overlap is the thing being measured.
  bool per_class = false;

  bool operator==(const NmsConfig&) const = default;
};

struct PageError {
  std::string page_id;
  std::string stage;
  std::string kind;
  std::string message;

  bool operator==(const PageError&) const = default;
};

struct PipelineRun {
  std::string run_id;
  std::string created_at;
  PromptSuite suite;
  BackendDescriptor backend;
  PreprocessConfig preprocess;
  NmsConfig nms;
  std::vector<PageRecord> pages;
  std::map<std::string, double> timing;  // stage -> seconds, summed over pages
  std::vector<Detection> detections;
  std::vector<PageError> errors;
  std::optional<std::string> parent_run;
  std::optional<std::string> session_id;

  const PageRecord* find_page(const std::string& page_id) const;
  void validate() const;
  bool operator==(const PipelineRun&) const = default;
};

/// Keeps detections with score >= box_threshold, order preserved.
std::vector<RawDetection> threshold_filter(const std::vector<RawDetection>& dets, const PromptGroup& group);

/// Greedy, class-agnostic suppression over one page. Candidates are visited
/// by score descending (ties: smaller x0, smaller y0, class name); a
/// candidate survives iff its IoU with every survivor is <= iou_thresh.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh);
std::vector<Detection> nms(const std::vector<Detection>& dets, const NmsConfig& cfg);

/// Canonical output order: page_id, score desc, then geometry and class.
void sort_detections(std::vector<Detection>& dets);

struct PipelineOptions {
  NmsConfig nms;
  bool segment = true;
  int workers = 1;
  // When set and raised, pages not yet started are skipped and reported as
  // "cancelled" errors; finished pages are kept.
  const std::atomic<bool>* cancel = nullptr;
};

/// Detection block + NMS for every page, then (optionally) the segmentation
/// block on the survivors. Pages must already be preprocessed into run_dir.
/// Backend failures are recorded in run.errors; the page's results for
/// that stage are dropped.
PipelineRun run_pipeline(const std::filesystem::path& run_dir, std::vector<PageRecord> pages,
                         const PromptSuite& suite, Backend& backend, const PipelineOptions& options);

/// Segmentation block alone: one segment call per page with detections.
void segment_run(PipelineRun& run, const std::filesystem::path& run_dir, Backend& backend, int workers,
                 const std::atomic<bool>* cancel = nullptr);

}  // namespace promptset
