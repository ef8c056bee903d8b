#pragma once

#include <string>
#include <vector>

#include "detcal/dataset.hpp"

namespace detcal {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ClassificationReport {
  std::vector<ClassMetrics> per_class;  // size num_classes, index = label
  ClassMetrics macro;                   // unweighted mean over all classes
};

/// One-vs-rest precision/recall/F1 per class. Classes absent from both
/// sequences contribute zeros to the macro average.
ClassificationReport classification_report(const std::vector<int>& predicted,
                                           const std::vector<int>& truth,
                                           int num_classes = kNumClasses);

struct ApReport {
  double ap = 0.0;        // mean over the 10 IoU thresholds 0.50..0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap_small = 0.0;  // GT area < 32^2
  double ap_medium = 0.0; // 32^2 <= area < 96^2
  double ap_large = 0.0;  // area >= 96^2
};

/// COCO-style AP: per class and IoU threshold, greedy score-ordered
/// matching to the highest-IoU unmatched GT, 101-point interpolated
/// precision envelope, averaged over classes with ground truth, then
/// thresholds. Size buckets restrict the GT by box area; detections
/// matched to out-of-bucket GT are ignored.
ApReport coco_ap(const DetectionMap& results, const GroundTruth& gt);

std::string ap_report_json(const ApReport& r);
std::string ap_report_table(const ApReport& r);
std::string classification_report_table(const ClassificationReport& r);

}  // namespace detcal
