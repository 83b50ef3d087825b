#pragma once

#include <map>
#include <string>
#include <vector>

#include "mdtal/timecodec.hpp"

namespace mdtal {

struct Prediction {
  std::string video;
  int class_id = 0;
  Segment segment;
  double score = 0.0;
};

struct GroundTruthInstance {
  std::string video;
  int class_id = 0;
  Segment segment;
};

// Temporal IoU; 0 when the union is empty (two identical zero-length segments).
double tiou(const Segment& a, const Segment& b);

// Greedy matching at one threshold: predictions in descending-score order
// each claim the unmatched same-class same-video GT of highest tIoU when that
// tIoU >= threshold. Returns one TP/FP flag per prediction (input order).
std::vector<char> match_greedy(const std::vector<Prediction>& preds_sorted,
                               const std::vector<GroundTruthInstance>& gts,
                               double threshold);

// All-point interpolated average precision from ordered TP/FP flags.
double average_precision(const std::vector<char>& tp_flags, int n_gt);

enum class ThresholdGrid { thumos, anet };

std::vector<double> grid_thresholds(ThresholdGrid grid);

struct EvalReport {
  std::vector<double> thresholds;
  // per threshold: class id -> AP
  std::vector<std::map<int, double>> ap_table;
  std::vector<double> map_per_threshold;
  double average_map = 0.0;

  std::string to_json() const;
};

// Deterministic ranking: score desc, then earlier start, then class id.
EvalReport map_suite(std::vector<Prediction> preds,
                     const std::vector<GroundTruthInstance>& gts, ThresholdGrid grid);

struct RtlReport {
  double miou = 0.0;
  double p_at_05 = 0.0;
  double p_at_075 = 0.0;
  double p_at_095 = 0.0;
  int n_queries = 0;

  std::string to_json() const;
};

// Single-instance regime: one prediction per query video (missing ones score
// zero tIoU); mIoU and precision-at-threshold over queries.
RtlReport rtl_suite(const std::vector<Prediction>& preds,
                    const std::vector<GroundTruthInstance>& gts);

// Optional tIoU-based non-maximum suppression for ablations.
std::vector<Prediction> nms(std::vector<Prediction> preds, double iou_threshold);

// JSONL round trip: {"video":id, "class":c, "start":s, "end":e, "score":p}
void write_predictions_jsonl(const std::string& path, const std::vector<Prediction>& preds);
std::vector<Prediction> read_predictions_jsonl(const std::string& path);

}  // namespace mdtal
