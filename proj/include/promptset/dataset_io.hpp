#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "promptset/eval.hpp"

namespace promptset {

std::string_view tool_version();

// ---- ground truth

/// COCO object-detection JSON. Image file stems become page ids and
/// [x, y, w, h] boxes become corner form in original space.
GroundTruth load_coco(const std::filesystem::path& path);
GroundTruth coco_from_json(const json& j, const std::string& origin);

// ---- run directory

json preprocess_config_to_json(const PreprocessConfig& cfg);
PreprocessConfig preprocess_config_from_json(const json& j);
json nms_config_to_json(const NmsConfig& cfg);
NmsConfig nms_config_from_json(const json& j);
json page_to_json(const PageRecord& page);
PageRecord page_from_json(const json& j);

/// manifest.json holds everything needed to reproduce the run; wall-clock
/// timings live in timing.json so that re-running a stage on unchanged
/// inputs leaves the other files byte-identical.
json manifest_to_json(const PipelineRun& run);
json detections_to_json(const std::vector<Detection>& dets);
json errors_to_json(const std::vector<PageError>& errors);

/// Writes manifest.json, detections.json, errors.json and timing.json under
/// the run lock, each file via temp-then-rename.
void persist_run(const PipelineRun& run, const std::filesystem::path& run_dir);
PipelineRun load_run(const std::filesystem::path& run_dir);
bool is_run_dir(const std::filesystem::path& dir);

// ---- review decisions

enum class ReviewStatus { accepted, rejected };
std::string_view to_string(ReviewStatus status);
ReviewStatus parse_review_status(std::string_view text);

struct ReviewDecision {
  std::string detection_id;
  ReviewStatus status = ReviewStatus::accepted;
  std::string reviewer;
  std::string timestamp;

  bool operator==(const ReviewDecision&) const = default;
};

json decision_to_json(const ReviewDecision& d);
ReviewDecision decision_from_json(const json& j);

std::filesystem::path decisions_path(const std::filesystem::path& run_dir);
void append_decision(const std::filesystem::path& run_dir, const ReviewDecision& decision);
/// Every well-formed line in log order. A torn final line is skipped.
std::vector<ReviewDecision> read_decisions(const std::filesystem::path& path);
/// Latest entry per detection wins.
std::map<std::string, ReviewStatus> latest_status(const std::vector<ReviewDecision>& log);

// ---- export

struct ExportBundle {
  std::filesystem::path output_root;
  std::filesystem::path coco_path;
  std::vector<std::string> exported_ids;
  std::size_t crops = 0;
  std::size_t masks = 0;
};

/// Integer pixel window covering `box`: floor the near corner, ceil the far
/// one, clamp to the image. Returned as [x0, y0, x1, y1) half-open.
std::array<int, 4> crop_window(const BBox& box, int width, int height);

/// Preprocessed-space mask resampled to the original page by nearest
/// neighbour through the page transform.
BitMask mask_to_original(const MaskRLE& mask, const PageRecord& page);

/// Exports every detection not rejected in `decisions` (undecided counts as
/// accepted): COCO annotations.json, crops/<id>.png and masks/<id>.png.
ExportBundle export_dataset(const PipelineRun& run, const std::map<std::string, ReviewStatus>& decisions,
                            const std::filesystem::path& out_root);

}  // namespace promptset
