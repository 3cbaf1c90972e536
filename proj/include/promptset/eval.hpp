#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "promptset/postprocess.hpp"

namespace promptset {

struct GtBox {
  std::string page_id;
  std::string class_name;
  BBox box;  // original space

  bool operator==(const GtBox&) const = default;
};

struct GroundTruth {
  std::vector<std::string> page_ids;    // every annotated image, even ones without boxes
  std::vector<std::string> categories;  // category names in file order
  std::vector<GtBox> boxes;
};

struct EvalConfig {
  double iou_thresh = 0.5;
  std::map<std::string, std::string> class_cast;  // empty = no casting
  bool strict_cast = false;  // unmapped classes are an error instead of passing through

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

json eval_config_to_json(const EvalConfig& cfg);
/// {"iou_thresh": .., "class_cast": {..}, "strict_cast": ..}; all optional.
EvalConfig eval_config_from_json(const json& j);

/// Rewrites class_name through `mapping`. Unmapped names pass through
/// unless `strict`, in which case they raise a casting error.
template <typename T>
std::vector<T> cast_classes(std::vector<T> items, const std::map<std::string, std::string>& mapping,
                            bool strict) {
  if (mapping.empty() && !strict) return items;
  for (auto& item : items) {
    if (auto it = mapping.find(item.class_name); it != mapping.end()) {
      item.class_name = it->second;
    } else if (strict) {
      throw Error(ErrorKind::casting, "class '" + item.class_name + "' has no cast target");
    }
  }
  return items;
}

std::string cast_class_name(const std::string& name, const EvalConfig& cfg);

/// Greedy matching. Detections are visited by score descending (ties keep
/// input order); each takes the highest-IoU unmatched ground truth on its
/// page with IoU >= iou_thresh. Returns labels aligned with `dets`
/// (true = TP). Callers pass a single class.
std::vector<bool> match_greedy(const std::vector<Detection>& dets, const std::vector<GtBox>& gts, double iou_thresh);

/// All-point interpolated AP. nullopt when there is neither ground truth
/// nor a detection; 0 when there are detections but no ground truth.
std::optional<double> average_precision(const std::vector<bool>& labels, const std::vector<double>& scores,
                                        std::size_t n_gt);

struct PrPoint {
  double recall;
  double precision;
  double score;
  bool tp;
};

struct ClassReport {
  std::string class_name;
  std::optional<double> ap;
  std::size_t n_gt = 0;
  std::size_t n_det = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<PrPoint> curve;
};

struct EvalReport {
  EvalConfig config;
  std::vector<ClassReport> classes;  // sorted by class name
  std::optional<double> mean_ap;     // over classes with at least one GT box
  std::size_t pages_evaluated = 0;
  std::size_t detections_without_gt_page = 0;

  const ClassReport* find(const std::string& class_name) const;
};

/// Evaluates detections against every page listed in `gt`. A detection on a
/// page that `gt` does not list is a usage error.
EvalReport evaluate(const std::vector<Detection>& dets, const GroundTruth& gt, const EvalConfig& cfg);

/// Restricts both sides to pages present in the run and in the ground truth.
EvalReport evaluate(const PipelineRun& run, const GroundTruth& gt, const EvalConfig& cfg);

json report_to_json(const EvalReport& report);
/// class,rank,score,recall,precision,tp
std::string report_pr_csv(const EvalReport& report);

}  // namespace promptset
