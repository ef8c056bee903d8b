#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "detcal/dataset.hpp"

namespace detcal {

struct SynthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Lognormal prior over a box's area as a fraction of the image area.
struct ClassSizePrior {
  double mean_area_frac = 0.02;
  double sigma_log = 0.35;
};

/// Generative model for contextual scenes. Object classes co-occur
/// according to the anchor-conditioned matrix, box sizes follow per-class
/// priors, and simulated detector outputs corrupt the ground truth with
/// box jitter, label confusion and spurious background boxes.
struct SceneModel {
  int num_classes = 10;
  double image_width = 640.0;
  double image_height = 480.0;
  Eigen::MatrixXd cooccurrence;    // K x K: P(class j present | anchor i), diagonal unused
  std::vector<ClassSizePrior> size_priors;  // per class, index 0 = class 1
  Eigen::MatrixXd label_confusion; // K x K rows summing to 1: P(detected | true)
  double box_jitter = 0.05;        // corner sigma as fraction of box size
  double score_tp_min = 0.4, score_tp_max = 0.95;
  double spurious_rate = 1.0;      // mean spurious boxes per image (Poisson)
  double score_fp_min = 0.06, score_fp_max = 0.6;
  std::uint64_t seed = 0;

  /// Default model used by the desk-scale pipeline: classes come in
  /// confusable (small, large) pairs and scenes mix only classes of one
  /// pair parity, so context fully determines the true member of a pair.
  static SceneModel pairs_default(int num_classes = 10, std::uint64_t seed = 0);

  void validate() const;  // throws SynthError on invalid probabilities
  std::string to_json() const;
  static SceneModel from_json(const std::string& text);
};

struct SynthOutput {
  GroundTruth gt;
  DetectionMap detections;
};

/// Deterministic under the model seed; per-image streams are derived
/// from (seed, image index) so images are independent.
SynthOutput generate(const SceneModel& model, int n_images);

}  // namespace detcal
