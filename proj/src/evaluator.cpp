#include "detcal/evaluator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace detcal {

ClassificationReport classification_report(const std::vector<int>& predicted,
                                           const std::vector<int>& truth, int num_classes) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("label sequences have different lengths");
  std::vector<int> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (p < 0 || p >= num_classes || t < 0 || t >= num_classes)
      throw std::invalid_argument("label out of range");
    if (p == t) {
      tp[p]++;
    } else {
      fp[p]++;
      fn[t]++;
    }
  }
  ClassificationReport report;
  report.per_class.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    ClassMetrics& m = report.per_class[c];
    m.precision = tp[c] + fp[c] > 0 ? double(tp[c]) / (tp[c] + fp[c]) : 0.0;
    m.recall = tp[c] + fn[c] > 0 ? double(tp[c]) / (tp[c] + fn[c]) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
    report.macro.precision += m.precision;
    report.macro.recall += m.recall;
    report.macro.f1 += m.f1;
  }
  report.macro.precision /= num_classes;
  report.macro.recall /= num_classes;
  report.macro.f1 /= num_classes;
  return report;
}

namespace {

constexpr int kNumThresholds = 10;   // 0.50, 0.55, ..., 0.95
constexpr int kRecallPoints = 101;   // 0.00, 0.01, ..., 1.00
constexpr double kSmallMax = 32.0 * 32.0;
constexpr double kMediumMax = 96.0 * 96.0;

enum Bucket { kAll = 0, kSmall, kMedium, kLarge, kNumBuckets };

int bucket_of(double gt_area) {
  if (gt_area < kSmallMax) return kSmall;
  if (gt_area < kMediumMax) return kMedium;
  return kLarge;
}

struct ScoredMatch {
  double score = 0.0;
  int matched_bucket = -1;  // bucket of the matched GT, -1 = unmatched (FP)
};

/// 101-point interpolated AP from per-detection match flags.
double average_precision(std::vector<ScoredMatch> dets, int bucket, int gt_count) {
  if (gt_count == 0) return -1.0;
  // Detections matched to an out-of-bucket GT are ignored entirely.
  if (bucket != kAll)
    std::erase_if(dets, [bucket](const ScoredMatch& d) {
      return d.matched_bucket >= 0 && d.matched_bucket != bucket;
    });
  std::stable_sort(dets.begin(), dets.end(),
                   [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });

  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (const auto& d : dets) {
    (d.matched_bucket >= 0 ? tp : fp)++;
    recall.push_back(double(tp) / gt_count);
    precision.push_back(double(tp) / (tp + fp));
  }
  // Monotone nonincreasing precision envelope.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);

  double sum = 0.0;
  std::size_t j = 0;
  for (int k = 0; k < kRecallPoints; ++k) {
    const double r = k / 100.0;
    while (j < recall.size() && recall[j] < r - 1e-12) ++j;
    if (j < recall.size()) sum += precision[j];
  }
  return sum / kRecallPoints;
}

}  // namespace

ApReport coco_ap(const DetectionMap& results, const GroundTruth& gt) {
  const int num_classes = gt.categories.size() + 1;

  // ap[threshold][bucket] accumulated over classes that have ground truth.
  std::array<std::array<double, kNumBuckets>, kNumThresholds> ap_sum{};
  std::array<std::array<int, kNumBuckets>, kNumThresholds> ap_classes{};

  for (int cls = 1; cls < num_classes; ++cls) {
    std::array<int, kNumBuckets> gt_count{};
    bool class_has_gt = false;
    for (const auto& [image_id, im] : gt.images)
      for (const auto& ann : im.annotations)
        if (ann.class_label == cls) {
          class_has_gt = true;
          gt_count[kAll]++;
          gt_count[bucket_of(area(ann.box))]++;
        }
    if (!class_has_gt) continue;

    for (int ti = 0; ti < kNumThresholds; ++ti) {
      const double thr = 0.5 + 0.05 * ti;
      std::vector<ScoredMatch> matches;
      for (const auto& [image_id, dets] : results) {
        auto img = gt.images.find(image_id);
        std::vector<const GroundTruthAnnotation*> anns;
        if (img != gt.images.end())
          for (const auto& ann : img->second.annotations)
            if (ann.class_label == cls) anns.push_back(&ann);

        // Greedy: detections by descending score, each takes the
        // highest-IoU still-unmatched GT at or above the threshold.
        std::vector<int> order;
        for (int i = 0; i < static_cast<int>(dets.size()); ++i)
          if (dets[i].class_label == cls) order.push_back(i);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return dets[a].score > dets[b].score; });
        std::vector<bool> used(anns.size(), false);
        for (int i : order) {
          double best_iou = thr;
          int best = -1;
          for (std::size_t g = 0; g < anns.size(); ++g) {
            if (used[g]) continue;
            const double v = iou(dets[i].box, anns[g]->box);
            if (v >= best_iou && (best < 0 || v > best_iou)) {
              best_iou = v;
              best = static_cast<int>(g);
            }
          }
          ScoredMatch m;
          m.score = dets[i].score;
          if (best >= 0) {
            used[best] = true;
            m.matched_bucket = bucket_of(area(anns[best]->box));
          }
          matches.push_back(m);
        }
      }
      for (int b = 0; b < kNumBuckets; ++b) {
        const double ap = average_precision(matches, b, gt_count[b]);
        if (ap >= 0.0) {
          ap_sum[ti][b] += ap;
          ap_classes[ti][b]++;
        }
      }
    }
  }

  auto mean_over_thresholds = [&](int b) {
    double sum = 0.0;
    int n = 0;
    for (int ti = 0; ti < kNumThresholds; ++ti)
      if (ap_classes[ti][b] > 0) {
        sum += ap_sum[ti][b] / ap_classes[ti][b];
        n++;
      }
    return n > 0 ? sum / n : 0.0;
  };
  auto at_threshold = [&](int ti, int b) {
    return ap_classes[ti][b] > 0 ? ap_sum[ti][b] / ap_classes[ti][b] : 0.0;
  };

  ApReport r;
  r.ap = mean_over_thresholds(kAll);
  r.ap50 = at_threshold(0, kAll);
  r.ap75 = at_threshold(5, kAll);
  r.ap_small = mean_over_thresholds(kSmall);
  r.ap_medium = mean_over_thresholds(kMedium);
  r.ap_large = mean_over_thresholds(kLarge);
  return r;
}

std::string ap_report_json(const ApReport& r) {
  nlohmann::json j = {{"AP", r.ap},     {"AP50", r.ap50},  {"AP75", r.ap75},
                      {"APs", r.ap_small}, {"APm", r.ap_medium}, {"APl", r.ap_large}};
  return j.dump(2);
}

std::string ap_report_table(const ApReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "        AP   AP50   AP75    APs    APm    APl\n";
  for (double v : {r.ap, r.ap50, r.ap75, r.ap_small, r.ap_medium, r.ap_large})
    os << std::setw(6) << v * 100.0 << ' ';
  os << '\n';
  return os.str();
}

std::string classification_report_table(const ClassificationReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "class  precision  recall  f1-score\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c)
    os << std::setw(5) << c << std::setw(11) << r.per_class[c].precision << std::setw(8)
       << r.per_class[c].recall << std::setw(10) << r.per_class[c].f1 << '\n';
  os << "macro" << std::setw(11) << r.macro.precision << std::setw(8) << r.macro.recall
     << std::setw(10) << r.macro.f1 << '\n';
  return os.str();
}

}  // namespace detcal
