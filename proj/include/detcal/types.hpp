#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "detcal/geometry.hpp"

namespace detcal {

/// Number of class slots including background at index 0.
inline constexpr int kNumClasses = 81;
/// Per-image detection cap of the baseline detector.
inline constexpr int kMaxDetectionsPerImage = 100;
/// Detections below this confidence are dropped at ingestion.
inline constexpr double kScoreFloor = 0.05;

/// One box emitted by the baseline detector.
struct Detection {
  std::int64_t image_id = 0;
  BoundingBox box;
  int class_label = 0;      // contiguous index in [1, kNumClasses-1]; never background
  double score = 0.0;       // detector confidence in [0,1]
  double bkg_score = 0.0;   // detector background probability (default 1 - score)
  std::int64_t detection_id = 0;
};

struct GroundTruthAnnotation {
  std::int64_t image_id = 0;
  BoundingBox box;
  int class_label = 0;  // contiguous index in [1, kNumClasses-1]
};

/// Training label for one detection: index into its image's detection
/// list plus the assigned truth class (0 = background).
struct LabeledExample {
  std::int64_t image_id = 0;
  int target_index = 0;
  int truth_label = 0;
};

using DetectionMap = std::map<std::int64_t, std::vector<Detection>>;

}  // namespace detcal
