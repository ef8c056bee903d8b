// Independent oracles used by the unit and acceptance suites. These
// deliberately avoid the library's computation paths: brute-force cell
// counting for IoU, central finite differences for gradients, and a
// naive re-derivation of the matching/interpolation rules for AP.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "detcal/evaluator.hpp"
#include "detcal/geometry.hpp"
#include "detcal/network.hpp"

namespace oracles {

/// IoU by counting cells of a fine grid whose centers fall inside each
/// box. Exact when box coordinates lie on a lattice coarser than `cell`
/// (cell centers then never sit on a box edge).
inline double raster_iou(const detcal::BoundingBox& a, const detcal::BoundingBox& b,
                         double cell) {
  const double x0 = std::min(a.x_min, b.x_min), x1 = std::max(a.x_max, b.x_max);
  const double y0 = std::min(a.y_min, b.y_min), y1 = std::max(a.y_max, b.y_max);
  const int nx = std::max(1, static_cast<int>(std::ceil((x1 - x0) / cell)));
  const int ny = std::max(1, static_cast<int>(std::ceil((y1 - y0) / cell)));
  long in_a = 0, in_b = 0, in_both = 0;
  for (int i = 0; i < nx; ++i) {
    const double x = x0 + (i + 0.5) * cell;
    const bool ax = x > a.x_min && x < a.x_max;
    const bool bx = x > b.x_min && x < b.x_max;
    if (!ax && !bx) continue;
    for (int j = 0; j < ny; ++j) {
      const double y = y0 + (j + 0.5) * cell;
      const bool in1 = ax && y > a.y_min && y < a.y_max;
      const bool in2 = bx && y > b.y_min && y < b.y_max;
      in_a += in1;
      in_b += in2;
      in_both += in1 && in2;
    }
  }
  const long uni = in_a + in_b - in_both;
  return uni > 0 ? static_cast<double>(in_both) / uni : 0.0;
}

/// Random box with coordinates on the 1/8 lattice in [0, 32].
inline detcal::BoundingBox lattice_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coord(0, 32 * 8);
  int x1 = coord(rng), x2 = coord(rng), y1 = coord(rng), y2 = coord(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {x1 / 8.0, y1 / 8.0, x2 / 8.0, y2 / 8.0};
}

/// Moves a freshly initialized model off ReLU kinks. Zero biases plus
/// zero inputs (padding, empty row sets) put pre-activations exactly at
/// 0, where the loss is one-sided and central differences measure half
/// the slope; random nonzero biases make the loss differentiable at the
/// evaluation point.
inline void jitter_biases(detcal::ModelParameters& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.01, 0.1);
  for (auto* layers : {&p.feature_layers, &p.classifier})
    for (auto& l : *layers)
      for (Eigen::Index i = 0; i < l.bias.size(); ++i)
        l.bias[i] = (rng() % 2 == 0 ? 1.0 : -1.0) * uni(rng);
}

inline double cross_entropy_loss(const detcal::ModelParameters& p, const detcal::RowSet& rows,
                                 const detcal::ImageEmbedding* emb, int truth) {
  const auto res = detcal::forward(p, rows, emb);
  return -std::log(res.probs[truth]);
}

/// Central finite-difference check of every parameter. Returns the
/// maximum normalized deviation |analytic - fd| / max(1, |analytic|, |fd|).
inline double fd_gradient_error(const detcal::ModelParameters& params,
                                const detcal::RowSet& rows,
                                const detcal::ImageEmbedding* emb, int truth,
                                double h = 1e-5) {
  detcal::Gradients grads(params.arch);
  detcal::backward(params, rows, emb, truth, grads);

  detcal::ModelParameters work = params;
  double worst = 0.0;
  auto check_block = [&](double* value, double analytic) {
    const double saved = *value;
    *value = saved + h;
    const double up = cross_entropy_loss(work, rows, emb, truth);
    *value = saved - h;
    const double down = cross_entropy_loss(work, rows, emb, truth);
    *value = saved;
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(analytic - fd) /
                       std::max({1.0, std::abs(analytic), std::abs(fd)});
    worst = std::max(worst, err);
  };

  for (std::size_t l = 0; l < work.feature_layers.size(); ++l) {
    auto& layer = work.feature_layers[l];
    const auto& g = grads.feature_layers[l];
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
        const double analytic =
            (l == 0 && c >= grads.first_layer_cols) ? 0.0 : g.weights(r, c);
        check_block(&layer.weights(r, c), analytic);
      }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
      check_block(&layer.bias(r), g.bias(r));
  }
  for (std::size_t l = 0; l < work.classifier.size(); ++l) {
    auto& layer = work.classifier[l];
    const auto& g = grads.classifier[l];
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
        check_block(&layer.weights(r, c), g.weights(r, c));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
      check_block(&layer.bias(r), g.bias(r));
  }
  return worst;
}

/// Naive single-threshold AP for one class: greedy matching re-derived
/// directly from its definition, 101-point interpolation done by
/// scanning every PR point for every recall sample.
inline double naive_ap_one_class(const detcal::DetectionMap& results,
                                 const detcal::GroundTruth& gt, int cls, double thr) {
  struct Det {
    double score;
    bool tp;
  };
  std::vector<Det> all;
  int n_gt = 0;
  for (const auto& [image_id, im] : gt.images)
    for (const auto& ann : im.annotations)
      if (ann.class_label == cls) n_gt++;
  if (n_gt == 0) return -1.0;

  for (const auto& [image_id, dets] : results) {
    std::vector<const detcal::GroundTruthAnnotation*> anns;
    if (auto it = gt.images.find(image_id); it != gt.images.end())
      for (const auto& ann : it->second.annotations)
        if (ann.class_label == cls) anns.push_back(&ann);
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(dets.size()); ++i)
      if (dets[i].class_label == cls) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return dets[x].score > dets[y].score; });
    std::vector<bool> used(anns.size(), false);
    for (int i : order) {
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < anns.size(); ++g) {
        if (used[g]) continue;
        const double v = detcal::iou(dets[i].box, anns[g]->box);
        if (v >= thr && v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) used[best] = true;
      all.push_back({dets[i].score, best >= 0});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Det& a, const Det& b) { return a.score > b.score; });
  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (const auto& d : all) {
    (d.tp ? tp : fp)++;
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
    sum += best;
  }
  return sum / 101.0;
}

struct NaiveAp {
  double ap, ap50, ap75;
};

inline NaiveAp naive_coco_ap(const detcal::DetectionMap& results,
                             const detcal::GroundTruth& gt) {
  NaiveAp out{0, 0, 0};
  int thr_count = 0;
  for (int ti = 0; ti < 10; ++ti) {
    const double thr = 0.5 + 0.05 * ti;
    double sum = 0.0;
    int n = 0;
    for (int cls = 1; cls <= gt.categories.size(); ++cls) {
      const double ap = naive_ap_one_class(results, gt, cls, thr);
      if (ap >= 0.0) {
        sum += ap;
        n++;
      }
    }
    const double mean = n > 0 ? sum / n : 0.0;
    if (n > 0) {
      out.ap += mean;
      thr_count++;
    }
    if (ti == 0) out.ap50 = mean;
    if (ti == 5) out.ap75 = mean;
  }
  out.ap = thr_count > 0 ? out.ap / thr_count : 0.0;
  return out;
}

}  // namespace oracles
