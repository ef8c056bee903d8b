#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "detcal/dataset.hpp"
#include "detcal/network.hpp"

namespace detcal {

struct CalibrationConfig {
  double label_threshold = 0.98;  // strict > for label swaps
  int iterations = 3;
};

struct CalibrationOutput {
  int label_pred = 0;
  double score_pred = 0.0;
  bool label_swapped = false;
  int iterations_run = 0;
};

/// Class-probability provider for one target against the current state
/// of the image's detections. The production path wraps the network;
/// tests may inject fixed distributions.
using ProbFn = std::function<Eigen::VectorXd(const std::vector<Detection>& current,
                                             int target_index, const ImageMeta& img)>;

/// The iterative label/score update loop. Even iterations rescale the
/// score by the calibrated probability of the current label times
/// (1 - original background score); odd iterations swap the label to the
/// best non-background class when its probability exceeds the threshold.
/// Features for each iteration are recomputed from the already-updated
/// labels and scores.
std::vector<CalibrationOutput> calibrate_image_with(const ProbFn& probs,
                                                    const std::vector<Detection>& detections,
                                                    const ImageMeta& img,
                                                    const CalibrationConfig& config = {});

std::vector<CalibrationOutput> calibrate_image(const ModelParameters& params,
                                               const std::vector<Detection>& detections,
                                               const ImageMeta& img,
                                               const EmbeddingStore* embeddings = nullptr,
                                               const CalibrationConfig& config = {});

/// Applies calibrate_image to every image and returns detections with
/// updated labels and scores (boxes untouched, record count preserved).
DetectionMap calibrate_dataset(const ModelParameters& params, const DetectionMap& dets,
                               const std::map<std::int64_t, ImageMeta>& metas,
                               const EmbeddingStore* embeddings = nullptr,
                               const CalibrationConfig& config = {},
                               std::map<std::int64_t, std::vector<CalibrationOutput>>*
                                   provenance = nullptr);

}  // namespace detcal
