#include "mdtal/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

namespace mdtal {

double tiou(const Segment& a, const Segment& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

std::vector<char> match_greedy(const std::vector<Prediction>& preds_sorted,
                               const std::vector<GroundTruthInstance>& gts,
                               double threshold) {
  std::vector<char> tp(preds_sorted.size(), 0);
  std::vector<char> taken(gts.size(), 0);
  for (size_t i = 0; i < preds_sorted.size(); ++i) {
    const Prediction& p = preds_sorted[i];
    int best = -1;
    double best_iou = 0.0;
    for (size_t j = 0; j < gts.size(); ++j) {
      if (taken[j]) continue;
      if (gts[j].video != p.video || gts[j].class_id != p.class_id) continue;
      const double v = tiou(p.segment, gts[j].segment);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0 && best_iou >= threshold) {
      tp[i] = 1;
      taken[best] = 1;
    }
  }
  return tp;
}

double average_precision(const std::vector<char>& tp_flags, int n_gt) {
  require(n_gt >= 0, "average_precision: negative GT count");
  if (n_gt == 0) return 0.0;
  const size_t n = tp_flags.size();
  if (n == 0) return 0.0;
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (size_t i = 0; i < n; ++i) {
    tp += tp_flags[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / n_gt;
  }
  // Precision envelope, then the area under the stepwise PR curve.
  for (size_t i = n - 1; i > 0; --i)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

std::vector<double> grid_thresholds(ThresholdGrid grid) {
  std::vector<double> out;
  if (grid == ThresholdGrid::thumos) {
    for (int i = 0; i < 5; ++i) out.push_back(0.3 + 0.1 * i);
  } else {
    for (int i = 0; i < 10; ++i) out.push_back(0.5 + 0.05 * i);
  }
  return out;
}

namespace {

void sort_predictions(std::vector<Prediction>& preds) {
  std::stable_sort(preds.begin(), preds.end(), [](const Prediction& a, const Prediction& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.segment.start != b.segment.start) return a.segment.start < b.segment.start;
    return a.class_id < b.class_id;
  });
}

}  // namespace

EvalReport map_suite(std::vector<Prediction> preds,
                     const std::vector<GroundTruthInstance>& gts, ThresholdGrid grid) {
  EvalReport report;
  report.thresholds = grid_thresholds(grid);
  sort_predictions(preds);

  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);

  for (double thr : report.thresholds) {
    std::map<int, double> ap_per_class;
    for (int cls : classes) {
      std::vector<Prediction> cp;
      std::vector<GroundTruthInstance> cg;
      for (const auto& p : preds)
        if (p.class_id == cls) cp.push_back(p);
      for (const auto& g : gts)
        if (g.class_id == cls) cg.push_back(g);
      const std::vector<char> tp = match_greedy(cp, cg, thr);
      ap_per_class[cls] = average_precision(tp, static_cast<int>(cg.size()));
    }
    double sum = 0.0;
    for (const auto& [cls, ap] : ap_per_class) sum += ap;
    report.ap_table.push_back(ap_per_class);
    report.map_per_threshold.push_back(classes.empty() ? 0.0 : sum / classes.size());
  }
  double total = 0.0;
  for (double v : report.map_per_threshold) total += v;
  report.average_map =
      report.map_per_threshold.empty() ? 0.0 : total / report.map_per_threshold.size();
  return report;
}

RtlReport rtl_suite(const std::vector<Prediction>& preds,
                    const std::vector<GroundTruthInstance>& gts) {
  RtlReport r;
  r.n_queries = static_cast<int>(gts.size());
  if (gts.empty()) return r;
  std::map<std::string, const Prediction*> best;
  for (const auto& p : preds) {
    auto it = best.find(p.video);
    if (it == best.end() || p.score > it->second->score) best[p.video] = &p;
  }
  double sum = 0.0;
  int n05 = 0, n075 = 0, n095 = 0;
  for (const auto& g : gts) {
    double v = 0.0;
    auto it = best.find(g.video);
    if (it != best.end()) v = tiou(it->second->segment, g.segment);
    sum += v;
    n05 += v >= 0.5;
    n075 += v >= 0.75;
    n095 += v >= 0.95;
  }
  r.miou = sum / gts.size();
  r.p_at_05 = static_cast<double>(n05) / gts.size();
  r.p_at_075 = static_cast<double>(n075) / gts.size();
  r.p_at_095 = static_cast<double>(n095) / gts.size();
  return r;
}

std::vector<Prediction> nms(std::vector<Prediction> preds, double iou_threshold) {
  sort_predictions(preds);
  std::vector<Prediction> kept;
  for (const auto& p : preds) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.video == p.video && k.class_id == p.class_id &&
          tiou(k.segment, p.segment) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["thresholds"] = thresholds;
  j["map_per_threshold"] = map_per_threshold;
  j["average_map"] = average_map;
  nlohmann::json table = nlohmann::json::array();
  for (size_t i = 0; i < ap_table.size(); ++i) {
    nlohmann::json row;
    for (const auto& [cls, ap] : ap_table[i]) row[std::to_string(cls)] = ap;
    table.push_back(row);
  }
  j["ap_table"] = table;
  return j.dump(2);
}

std::string RtlReport::to_json() const {
  nlohmann::json j;
  j["miou"] = miou;
  j["p_at_0.5"] = p_at_05;
  j["p_at_0.75"] = p_at_075;
  j["p_at_0.95"] = p_at_095;
  j["n_queries"] = n_queries;
  return j.dump(2);
}

void write_predictions_jsonl(const std::string& path, const std::vector<Prediction>& preds) {
  std::ofstream out(path);
  require_state(out.good(), "write_predictions_jsonl: cannot open " + path);
  for (const auto& p : preds) {
    nlohmann::json j = {{"video", p.video},
                        {"class", p.class_id},
                        {"start", p.segment.start},
                        {"end", p.segment.end},
                        {"score", p.score}};
    out << j.dump() << "\n";
  }
}

std::vector<Prediction> read_predictions_jsonl(const std::string& path) {
  std::ifstream in(path);
  require_state(in.good(), "read_predictions_jsonl: cannot open " + path);
  std::vector<Prediction> preds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("read_predictions_jsonl: malformed JSON on line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    Prediction p;
    p.video = j.at("video").get<std::string>();
    p.class_id = j.at("class").get<int>();
    p.segment = Segment(j.at("start").get<double>(), j.at("end").get<double>());
    p.score = j.at("score").get<double>();
    preds.push_back(p);
  }
  return preds;
}

}  // namespace mdtal
