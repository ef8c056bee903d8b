#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "detcal/types.hpp"

namespace detcal {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : DatasetError {
  using DatasetError::DatasetError;
};
struct UnknownCategoryError : DatasetError {
  using DatasetError::DatasetError;
};
struct BadImageError : DatasetError {
  using DatasetError::DatasetError;
};
struct UnknownImageError : DatasetError {
  using DatasetError::DatasetError;
};

/// Mapping between raw COCO category ids and contiguous labels 1..K.
/// Built by sorting the category ids ascending and enumerating from 1.
class CategoryMap {
 public:
  CategoryMap() = default;
  explicit CategoryMap(std::vector<std::int64_t> sorted_coco_ids);

  int size() const { return static_cast<int>(coco_ids_.size()); }
  /// Raw id -> contiguous label in [1, size()]; throws UnknownCategoryError.
  int to_contiguous(std::int64_t coco_id) const;
  std::int64_t to_coco(int contiguous) const;

  void save(const std::string& path) const;
  static CategoryMap load(const std::string& path);

  bool operator==(const CategoryMap&) const = default;

 private:
  std::vector<std::int64_t> coco_ids_;          // index i -> label i+1
  std::map<std::int64_t, int> to_contiguous_;
};

struct GroundTruthImage {
  ImageMeta meta;
  std::vector<GroundTruthAnnotation> annotations;
};

struct GroundTruth {
  std::map<std::int64_t, GroundTruthImage> images;
  CategoryMap categories;
};

/// Parses a COCO annotation JSON (images / annotations / categories).
/// Boxes are converted from [x, y, w, h] to corner form and category ids
/// remapped to contiguous labels. Degenerate boxes are retained with a
/// warning on stderr.
GroundTruth load_ground_truth(const std::string& path);

/// Parses a COCO results JSON (list of {image_id, category_id, bbox,
/// score}, optionally extended with bkg_score and id). Detections with
/// score < kScoreFloor are dropped; at most kMaxDetectionsPerImage are
/// kept per image, highest scores first. When `validate_against` is
/// given, unknown image ids raise UnknownImageError listing them.
DetectionMap load_detections(const std::string& path, const CategoryMap& categories,
                             const GroundTruth* validate_against = nullptr);

void save_detections(const DetectionMap& dets, const CategoryMap& categories,
                     const std::string& path);
void save_ground_truth(const GroundTruth& gt, const std::string& path);

/// Assigns each detection the class of its maximum-IoU ground-truth box
/// when that IoU exceeds 0.5, else background. Ties broken by smaller GT
/// record index. Output ordered by image id, then detection index.
std::vector<LabeledExample> assign_truth_labels(const DetectionMap& dets,
                                                const GroundTruth& gt);

/// Keeps every non-background example; background examples survive
/// independently with probability 1/factor under a seeded generator.
std::vector<LabeledExample> downsample_background(const std::vector<LabeledExample>& examples,
                                                  int factor, std::uint64_t seed);

/// JSON-lines {image_id, target_index, truth_label}.
void save_labeled_examples(const std::vector<LabeledExample>& examples,
                           const std::string& path);
std::vector<LabeledExample> load_labeled_examples(const std::string& path);

}  // namespace detcal
