#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "detcal/types.hpp"

namespace detcal {

/// Width of the per-pair feature vector.
inline constexpr int kFeatureDim = 357;
/// Fixed row count of the feature matrix (detection cap minus the target).
inline constexpr int kMaxSupportRows = 99;

/// Ordered feature groups; widths sum to kFeatureDim.
struct FeatureLayout {
  struct Group {
    std::string name;
    int width = 0;
    std::string source;
  };
  std::vector<Group> groups;

  static const FeatureLayout& standard();
  int total_width() const;
  std::string to_json() const;
};

/// M x N matrix of pair features for one target, zero-padded past
/// valid_rows. Every entry of a valid row lies in [0,1].
struct FeatureMatrix {
  Eigen::MatrixXd values;  // kMaxSupportRows x kFeatureDim
  int valid_rows = 0;
  int target_index = 0;
};

/// Per-image class counts replicated into every feature row.
struct ClassCounts {
  std::array<int, kNumClasses> n_support{};  // support boxes per class
  std::array<int, kNumClasses> n_overlap{};  // ... with intersection area > 0 against target
};

ClassCounts per_image_counts(const std::vector<Detection>& detections, int target_index);

/// The 357 features of one (target, support) pair, normalized to [0,1].
Eigen::VectorXd pair_features(const Detection& target, const Detection& support,
                              const ImageMeta& img, const ClassCounts& counts);

/// One row per non-target detection, in original list order.
FeatureMatrix build_matrix(const std::vector<Detection>& detections, int target_index,
                           const ImageMeta& img);

/// Externally supplied image embeddings (global + per-target crop).
struct ImageEmbedding {
  Eigen::VectorXd global_vec;
  Eigen::VectorXd target_vec;
};

/// Embedding vectors loaded from a JSON-lines file of
/// {image_id, detection_id|"global", vector: [...]}.
class EmbeddingStore {
 public:
  static EmbeddingStore load(const std::string& path);

  bool empty() const { return global_.empty() && per_detection_.empty(); }
  int dim() const { return dim_; }
  /// Throws DatasetError when either vector is missing.
  ImageEmbedding get(std::int64_t image_id, std::int64_t detection_id) const;

  void put_global(std::int64_t image_id, Eigen::VectorXd v);
  void put_detection(std::int64_t image_id, std::int64_t detection_id, Eigen::VectorXd v);

 private:
  int dim_ = 0;
  std::map<std::int64_t, Eigen::VectorXd> global_;
  std::map<std::pair<std::int64_t, std::int64_t>, Eigen::VectorXd> per_detection_;
};

}  // namespace detcal
