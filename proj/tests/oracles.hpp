#pragma once

// Reference implementations used as test oracles. Written independently of
// the library: different formulations, no shared helpers beyond the plain
// data types.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "promptset/eval.hpp"

namespace oracle {

using promptset::BBox;
using promptset::Detection;
using promptset::GtBox;
using promptset::Image;

/// Half-pixel-center bilinear resize written as a tent-filter sum over every
/// source pixel, with sample positions clamped to the image.
Image bilinear(const Image& src, int target);

/// Percentile stretch with cutoffs read off the sorted sample array and the
/// mapping done in integer arithmetic.
Image autocontrast(const Image& src, double low_pct, double high_pct);

/// Intersection over union from first principles.
double iou(const BBox& a, const BBox& b);

/// O(n^2) suppression: a detection survives iff no surviving detection that
/// outranks it overlaps it by more than `thresh`.
std::vector<Detection> nms(const std::vector<Detection>& dets, double thresh);

/// AP as sum over true positives of (1/n_gt) * best precision at any rank at
/// or below it.
std::optional<double> average_precision(const std::vector<bool>& labels_in_rank_order, std::size_t n_gt);

struct ClassResult {
  std::optional<double> ap;
  std::size_t tp = 0;
  std::size_t n_gt = 0;
};

/// Per-class evaluation: rank detections, match each against every GT box on
/// its page, then integrate the PR curve.
ClassResult evaluate_class(const std::vector<Detection>& dets, const std::vector<GtBox>& gts, double thresh);

// ---- random instance helpers

BBox random_box(std::mt19937_64& rng, double extent, promptset::Space space = promptset::Space::original);
std::vector<std::vector<std::uint8_t>> random_grid(std::mt19937_64& rng, int h, int w, double density);

/// One page of detections. `coarse` puts boxes and scores on a small grid so
/// score, x0 and y0 ties are common.
std::vector<Detection> random_detections(std::mt19937_64& rng, int n, bool coarse);

/// Single-class evaluation instance: up to 5 pages, up to 20 GT and 20
/// detections per page, most detections jittered copies of GT boxes.
struct EvalInstance {
  std::vector<Detection> dets;
  std::vector<GtBox> gts;
  std::vector<std::string> pages;
};
EvalInstance random_eval_instance(std::mt19937_64& rng);

}  // namespace oracle
