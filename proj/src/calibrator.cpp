#include "detcal/calibrator.hpp"

namespace detcal {

std::vector<CalibrationOutput> calibrate_image_with(const ProbFn& probs,
                                                    const std::vector<Detection>& detections,
                                                    const ImageMeta& img,
                                                    const CalibrationConfig& config) {
  const int n = static_cast<int>(detections.size());
  std::vector<CalibrationOutput> out(n);
  std::vector<Detection> current = detections;
  for (int i = 0; i < n; ++i) {
    out[i].label_pred = detections[i].class_label;
    out[i].score_pred = detections[i].score;
  }

  for (int iter = 0; iter < config.iterations; ++iter) {
    // All targets see the same state within one iteration.
    std::vector<Eigen::VectorXd> p(n);
    for (int i = 0; i < n; ++i) p[i] = probs(current, i, img);

    if (iter % 2 == 0) {
      // Update score: calibrated probability of the current label, damped
      // by one minus the original background score.
      for (int i = 0; i < n; ++i)
        out[i].score_pred = p[i][out[i].label_pred] * (1.0 - detections[i].bkg_score);
    } else {
      // Update label: best non-background class, strict threshold.
      for (int i = 0; i < n; ++i) {
        int best = 1;
        for (int c = 2; c < p[i].size(); ++c)
          if (p[i][c] > p[i][best]) best = c;
        if (p[i][best] > config.label_threshold) {
          out[i].label_swapped = out[i].label_swapped || best != out[i].label_pred;
          out[i].label_pred = best;
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      current[i].class_label = out[i].label_pred;
      current[i].score = out[i].score_pred;
      out[i].iterations_run = iter + 1;
    }
  }
  return out;
}

std::vector<CalibrationOutput> calibrate_image(const ModelParameters& params,
                                               const std::vector<Detection>& detections,
                                               const ImageMeta& img,
                                               const EmbeddingStore* embeddings,
                                               const CalibrationConfig& config) {
  ProbFn probs = [&](const std::vector<Detection>& current, int target_index,
                     const ImageMeta& meta) {
    const RowSet rows = to_rowset(build_matrix(current, target_index, meta));
    if (embeddings && !embeddings->empty()) {
      const ImageEmbedding emb =
          embeddings->get(meta.image_id, detections[target_index].detection_id);
      return forward(params, rows, &emb).probs;
    }
    return forward(params, rows).probs;
  };
  return calibrate_image_with(probs, detections, img, config);
}

DetectionMap calibrate_dataset(const ModelParameters& params, const DetectionMap& dets,
                               const std::map<std::int64_t, ImageMeta>& metas,
                               const EmbeddingStore* embeddings,
                               const CalibrationConfig& config,
                               std::map<std::int64_t, std::vector<CalibrationOutput>>*
                                   provenance) {
  DetectionMap out;
  for (const auto& [image_id, list] : dets) {
    auto meta = metas.find(image_id);
    if (meta == metas.end())
      throw UnknownImageError("no image metadata for image id " + std::to_string(image_id));
    std::vector<CalibrationOutput> res =
        calibrate_image(params, list, meta->second, embeddings, config);
    std::vector<Detection> updated = list;
    for (std::size_t i = 0; i < list.size(); ++i) {
      updated[i].class_label = res[i].label_pred;
      updated[i].score = res[i].score_pred;
    }
    out[image_id] = std::move(updated);
    if (provenance) (*provenance)[image_id] = std::move(res);
  }
  return out;
}

}  // namespace detcal
