#include "detcal/features.hpp"

#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "detcal/dataset.hpp"

namespace detcal {

using nlohmann::json;

const FeatureLayout& FeatureLayout::standard() {
  static const FeatureLayout layout{{
      {"positions", 12, "x/y min, max, center of target and support, over image size"},
      {"areas", 3, "target and support area over image area, target area ratio"},
      {"distance_angle", 2, "center distance over diagonal, angle mapped to (0,1]"},
      {"overlap", 3, "iou, intersection over target area, intersection over support area"},
      {"class_counts", 162, "support and overlapping-support counts per class, over 100"},
      {"scores", 2, "target and support confidence"},
      {"class_onehots", 162, "one-hot labels of target and support"},
      {"aspects", 3, "target, support and global image aspect w/(w+h)"},
      {"edges", 8, "target and support border flags (left, right, top, bottom)"},
  }};
  return layout;
}

int FeatureLayout::total_width() const {
  int sum = 0;
  for (const auto& g : groups) sum += g.width;
  return sum;
}

std::string FeatureLayout::to_json() const {
  json out = json::array();
  int offset = 0;
  for (const auto& g : groups) {
    out.push_back({{"name", g.name}, {"offset", offset}, {"width", g.width},
                   {"source", g.source}});
    offset += g.width;
  }
  return json{{"total_width", offset}, {"groups", out}}.dump(2);
}

ClassCounts per_image_counts(const std::vector<Detection>& detections, int target_index) {
  ClassCounts counts;
  const Detection& target = detections.at(target_index);
  for (int i = 0; i < static_cast<int>(detections.size()); ++i) {
    if (i == target_index) continue;
    const Detection& s = detections[i];
    counts.n_support[s.class_label]++;
    if (intersection_area(target.box, s.box) > 0.0) counts.n_overlap[s.class_label]++;
  }
  return counts;
}

namespace {

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Eigen::VectorXd pair_features(const Detection& target, const Detection& support,
                              const ImageMeta& img, const ClassCounts& counts) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kFeatureDim);
  const double w = img.width, h = img.height;
  int k = 0;

  for (const Detection* d : {&target, &support}) {
    f[k++] = clamp01(d->box.x_min / w);
    f[k++] = clamp01(d->box.y_min / h);
    f[k++] = clamp01(d->box.x_max / w);
    f[k++] = clamp01(d->box.y_max / h);
    f[k++] = clamp01(d->box.center_x() / w);
    f[k++] = clamp01(d->box.center_y() / h);
  }

  const double area_t = area(target.box), area_s = area(support.box);
  f[k++] = clamp01(area_t / (w * h));
  f[k++] = clamp01(area_s / (w * h));
  f[k++] = (area_t + area_s) > 0.0 ? area_t / (area_t + area_s) : 0.5;

  const auto da = distance_angle(target.box, support.box);
  f[k++] = clamp01(da.distance / img.diagonal());
  f[k++] = clamp01((da.angle + std::numbers::pi) / (2.0 * std::numbers::pi));

  const auto ov = overlap_ratios(target.box, support.box);
  f[k++] = clamp01(ov.iou);
  f[k++] = clamp01(ov.inter_over_a);
  f[k++] = clamp01(ov.inter_over_b);

  for (int c = 0; c < kNumClasses; ++c)
    f[k++] = clamp01(counts.n_support[c] / double(kMaxDetectionsPerImage));
  for (int c = 0; c < kNumClasses; ++c)
    f[k++] = clamp01(counts.n_overlap[c] / double(kMaxDetectionsPerImage));

  f[k++] = clamp01(target.score);
  f[k++] = clamp01(support.score);

  f[k + target.class_label] = 1.0;
  k += kNumClasses;
  f[k + support.class_label] = 1.0;
  k += kNumClasses;

  f[k++] = aspect(target.box);
  f[k++] = aspect(support.box);
  f[k++] = aspect(img);

  for (const Detection* d : {&target, &support}) {
    const auto e = edge_flags(d->box, img);
    f[k++] = e.left ? 1.0 : 0.0;
    f[k++] = e.right ? 1.0 : 0.0;
    f[k++] = e.top ? 1.0 : 0.0;
    f[k++] = e.bottom ? 1.0 : 0.0;
  }
  return f;
}

FeatureMatrix build_matrix(const std::vector<Detection>& detections, int target_index,
                           const ImageMeta& img) {
  if (target_index < 0 || target_index >= static_cast<int>(detections.size()))
    throw std::out_of_range("target_index out of range");
  FeatureMatrix m;
  m.values = Eigen::MatrixXd::Zero(kMaxSupportRows, kFeatureDim);
  m.target_index = target_index;
  const ClassCounts counts = per_image_counts(detections, target_index);
  int row = 0;
  for (int i = 0; i < static_cast<int>(detections.size()); ++i) {
    if (i == target_index) continue;
    m.values.row(row++) = pair_features(detections[target_index], detections[i], img, counts);
  }
  m.valid_rows = row;
  return m;
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  EmbeddingStore store;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r = json::parse(line, nullptr, false);
    if (r.is_discarded()) throw ParseError("invalid JSON line in " + path);
    auto vec = r.at("vector").get<std::vector<double>>();
    Eigen::VectorXd v = Eigen::Map<Eigen::VectorXd>(vec.data(), vec.size());
    const std::int64_t image_id = r.at("image_id").get<std::int64_t>();
    if (r.at("detection_id").is_string())
      store.put_global(image_id, std::move(v));
    else
      store.put_detection(image_id, r["detection_id"].get<std::int64_t>(), std::move(v));
  }
  return store;
}

void EmbeddingStore::put_global(std::int64_t image_id, Eigen::VectorXd v) {
  if (dim_ == 0) dim_ = static_cast<int>(v.size());
  if (v.size() != dim_) throw ParseError("inconsistent embedding dimension");
  global_[image_id] = std::move(v);
}

void EmbeddingStore::put_detection(std::int64_t image_id, std::int64_t detection_id,
                                   Eigen::VectorXd v) {
  if (dim_ == 0) dim_ = static_cast<int>(v.size());
  if (v.size() != dim_) throw ParseError("inconsistent embedding dimension");
  per_detection_[{image_id, detection_id}] = std::move(v);
}

ImageEmbedding EmbeddingStore::get(std::int64_t image_id, std::int64_t detection_id) const {
  auto g = global_.find(image_id);
  auto t = per_detection_.find({image_id, detection_id});
  if (g == global_.end() || t == per_detection_.end()) {
    std::ostringstream msg;
    msg << "missing embedding for image " << image_id << " detection " << detection_id;
    throw DatasetError(msg.str());
  }
  return {g->second, t->second};
}

}  // namespace detcal
