#include "promptset/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "promptset/log.hpp"

namespace promptset {

void EvalConfig::validate() const {
  if (!(std::isfinite(iou_thresh) && iou_thresh > 0 && iou_thresh < 1)) {
    throw Error(ErrorKind::invalid_config, "eval iou_thresh must lie in (0,1)");
  }
}

json eval_config_to_json(const EvalConfig& cfg) {
  return {{"iou_thresh", canonical_real(cfg.iou_thresh)},
          {"class_cast", cfg.class_cast},
          {"strict_cast", cfg.strict_cast}};
}

EvalConfig eval_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::invalid_config, "eval config must be an object");
  EvalConfig cfg;
  for (const auto& [k, v] : j.items()) {
    if (k == "iou_thresh") {
      cfg.iou_thresh = require<double>(j, "iou_thresh");
    } else if (k == "class_cast") {
      cfg.class_cast = require<std::map<std::string, std::string>>(j, "class_cast");
    } else if (k == "strict_cast") {
      cfg.strict_cast = require<bool>(j, "strict_cast");
    } else {
      throw Error(ErrorKind::invalid_config, "unknown eval key '" + k + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::string cast_class_name(const std::string& name, const EvalConfig& cfg) {
  if (auto it = cfg.class_cast.find(name); it != cfg.class_cast.end()) return it->second;
  if (cfg.strict_cast) throw Error(ErrorKind::casting, "class '" + name + "' has no cast target");
  return name;
}

namespace {

// Score descending; equal scores keep input order.
std::vector<std::size_t> rank_by_score(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

std::vector<bool> match_greedy(const std::vector<Detection>& dets, const std::vector<GtBox>& gts, double iou_thresh) {
  for (const auto& d : dets) {
    if (d.box.space != Space::original) throw Error(ErrorKind::usage, "detections must be in original space");
  }
  std::map<std::string, std::vector<std::size_t>> gt_by_page;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (gts[i].box.space != Space::original) throw Error(ErrorKind::usage, "ground truth must be in original space");
    gt_by_page[gts[i].page_id].push_back(i);
  }

  std::vector<double> scores;
  scores.reserve(dets.size());
  for (const auto& d : dets) scores.push_back(d.score);

  std::vector<bool> matched(gts.size(), false);
  std::vector<bool> labels(dets.size(), false);
  for (std::size_t di : rank_by_score(scores)) {
    const auto it = gt_by_page.find(dets[di].page_id);
    if (it == gt_by_page.end()) continue;
    std::optional<std::size_t> best;
    double best_iou = -1;
    for (std::size_t gi : it->second) {
      if (matched[gi]) continue;
      const double v = iou(dets[di].box, gts[gi].box);
      if (v >= iou_thresh && v > best_iou) {
        best = gi;
        best_iou = v;
      }
    }
    if (best) {
      matched[*best] = true;
      labels[di] = true;
    }
  }
  return labels;
}

std::optional<double> average_precision(const std::vector<bool>& labels, const std::vector<double>& scores,
                                        std::size_t n_gt) {
  if (labels.size() != scores.size()) {
    throw Error(ErrorKind::usage, "labels and scores differ in length");
  }
  if (n_gt == 0) return labels.empty() ? std::nullopt : std::optional<double>(0.0);

  const auto order = rank_by_score(scores);
  const std::size_t n = order.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[order[k]]) ++tp;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  // Precision envelope: best precision at this recall or beyond.
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);

  double ap = 0;
  double prev_recall = 0;
  for (std::size_t k = 0; k < n; ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

const ClassReport* EvalReport::find(const std::string& class_name) const {
  for (const auto& c : classes) {
    if (c.class_name == class_name) return &c;
  }
  return nullptr;
}

EvalReport evaluate(const std::vector<Detection>& dets_in, const GroundTruth& gt, const EvalConfig& cfg) {
  cfg.validate();
  const std::set<std::string> gt_pages(gt.page_ids.begin(), gt.page_ids.end());
  for (const auto& d : dets_in) {
    if (!gt_pages.count(d.page_id)) {
      throw Error(ErrorKind::usage, "detection on page '" + d.page_id + "' which the ground truth does not list");
    }
  }
  const auto dets = cast_classes(dets_in, cfg.class_cast, cfg.strict_cast);
  const auto gts = cast_classes(gt.boxes, cfg.class_cast, cfg.strict_cast);

  std::set<std::string> class_names;
  for (const auto& c : gt.categories) class_names.insert(cast_class_name(c, cfg));
  for (const auto& g : gts) class_names.insert(g.class_name);
  for (const auto& d : dets) class_names.insert(d.class_name);

  EvalReport report;
  report.config = cfg;
  report.pages_evaluated = gt_pages.size();
  double ap_sum = 0;
  std::size_t ap_classes = 0;
  for (const auto& cls : class_names) {
    std::vector<Detection> cdets;
    std::vector<GtBox> cgts;
    for (const auto& d : dets) {
      if (d.class_name == cls) cdets.push_back(d);
    }
    for (const auto& g : gts) {
      if (g.class_name == cls) cgts.push_back(g);
    }
    const auto labels = match_greedy(cdets, cgts, cfg.iou_thresh);
    std::vector<double> scores;
    for (const auto& d : cdets) scores.push_back(d.score);

    ClassReport cr;
    cr.class_name = cls;
    cr.n_gt = cgts.size();
    cr.n_det = cdets.size();
    cr.tp = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    cr.fp = cr.n_det - cr.tp;
    cr.fn = cr.n_gt - cr.tp;
    cr.ap = average_precision(labels, scores, cr.n_gt);

    std::size_t tp = 0;
    const auto order = rank_by_score(scores);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const bool is_tp = labels[order[k]];
      if (is_tp) ++tp;
      cr.curve.push_back(PrPoint{cr.n_gt ? static_cast<double>(tp) / static_cast<double>(cr.n_gt) : 0.0,
                                 static_cast<double>(tp) / static_cast<double>(k + 1), scores[order[k]], is_tp});
    }
    if (cr.n_gt > 0 && cr.ap) {
      ap_sum += *cr.ap;
      ++ap_classes;
    }
    report.classes.push_back(std::move(cr));
  }
  if (ap_classes) report.mean_ap = ap_sum / static_cast<double>(ap_classes);
  return report;
}

EvalReport evaluate(const PipelineRun& run, const GroundTruth& gt, const EvalConfig& cfg) {
  std::set<std::string> run_pages;
  for (const auto& p : run.pages) run_pages.insert(p.page_id);

  GroundTruth scoped;
  scoped.categories = gt.categories;
  for (const auto& p : gt.page_ids) {
    if (run_pages.count(p)) scoped.page_ids.push_back(p);
  }
  const std::set<std::string> shared(scoped.page_ids.begin(), scoped.page_ids.end());
  for (const auto& g : gt.boxes) {
    if (shared.count(g.page_id)) scoped.boxes.push_back(g);
  }
  std::vector<Detection> dets;
  std::size_t orphaned = 0;
  for (const auto& d : run.detections) {
    if (shared.count(d.page_id)) {
      dets.push_back(d);
    } else {
      ++orphaned;
    }
  }
  if (orphaned) log::warn("detections_without_ground_truth_page", {{"count", orphaned}});
  EvalReport report = evaluate(dets, scoped, cfg);
  report.detections_without_gt_page = orphaned;
  return report;
}

json report_to_json(const EvalReport& report) {
  json classes = json::array();
  for (const auto& c : report.classes) {
    json curve = json::array();
    for (const auto& p : c.curve) {
      curve.push_back({{"recall", canonical_real(p.recall)},
                       {"precision", canonical_real(p.precision)},
                       {"score", canonical_real(p.score)},
                       {"tp", p.tp}});
    }
    classes.push_back({{"class_name", c.class_name},
                       {"ap", c.ap ? json(canonical_real(*c.ap)) : json(nullptr)},
                       {"n_gt", c.n_gt},
                       {"n_det", c.n_det},
                       {"tp", c.tp},
                       {"fp", c.fp},
                       {"fn", c.fn},
                       {"pr_curve", curve}});
  }
  return {{"config", eval_config_to_json(report.config)},
          {"classes", classes},
          {"mean_ap", report.mean_ap ? json(canonical_real(*report.mean_ap)) : json(nullptr)},
          {"pages_evaluated", report.pages_evaluated},
          {"detections_without_gt_page", report.detections_without_gt_page}};
}

std::string report_pr_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "class,rank,score,recall,precision,tp\n";
  out.precision(9);
  for (const auto& c : report.classes) {
    for (std::size_t k = 0; k < c.curve.size(); ++k) {
      const auto& p = c.curve[k];
      out << c.class_name << ',' << (k + 1) << ',' << p.score << ',' << p.recall << ',' << p.precision << ','
          << (p.tp ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

}  // namespace promptset
