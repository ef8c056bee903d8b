#include "detcal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

namespace detcal {

using nlohmann::json;

SceneModel SceneModel::pairs_default(int num_classes, std::uint64_t seed) {
  if (num_classes < 2 || num_classes % 2 != 0)
    throw SynthError("pairs_default needs an even class count >= 2");
  SceneModel m;
  m.num_classes = num_classes;
  m.seed = seed;

  // Scenes mix only classes of the anchor's parity; the detector confuses
  // classes within a (small, large) pair, so context resolves the label.
  m.cooccurrence = Eigen::MatrixXd::Zero(num_classes, num_classes);
  for (int a = 0; a < num_classes; ++a)
    for (int j = 0; j < num_classes; ++j)
      if (j != a && j % 2 == a % 2) m.cooccurrence(a, j) = 0.7;

  m.size_priors.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    m.size_priors[c].mean_area_frac = c % 2 == 0 ? 0.015 : 0.055;
    m.size_priors[c].sigma_log = 0.35;
  }

  m.label_confusion = Eigen::MatrixXd::Zero(num_classes, num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const int partner = c % 2 == 0 ? c + 1 : c - 1;
    m.label_confusion(c, c) = 0.8;
    m.label_confusion(c, partner) = 0.2;
  }
  return m;
}

void SceneModel::validate() const {
  if (num_classes < 1) throw SynthError("num_classes must be positive");
  if (image_width <= 0 || image_height <= 0) throw SynthError("image size must be positive");
  if (cooccurrence.rows() != num_classes || cooccurrence.cols() != num_classes ||
      label_confusion.rows() != num_classes || label_confusion.cols() != num_classes)
    throw SynthError("probability matrices must be num_classes x num_classes");
  if ((cooccurrence.array() < 0).any() || (cooccurrence.array() > 1).any())
    throw SynthError("co-occurrence entries must lie in [0,1]");
  for (int c = 0; c < num_classes; ++c) {
    const double row = label_confusion.row(c).sum();
    if ((label_confusion.row(c).array() < 0).any() || std::abs(row - 1.0) > 1e-9)
      throw SynthError("confusion row " + std::to_string(c) + " must sum to 1");
  }
  if (static_cast<int>(size_priors.size()) != num_classes)
    throw SynthError("size_priors must have one entry per class");
  for (const auto& p : size_priors)
    if (p.mean_area_frac <= 0 || p.mean_area_frac > 1 || p.sigma_log < 0)
      throw SynthError("invalid size prior");
  if (spurious_rate < 0) throw SynthError("spurious_rate must be nonnegative");
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

BoundingBox random_box(std::mt19937_64& rng, const SceneModel& m, double area_frac) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double img_area = m.image_width * m.image_height;
  double box_area = std::clamp(area_frac, 1e-5, 0.9) * img_area;
  const double a = 0.35 + 0.3 * uni(rng);  // aspect w/(w+h)
  double w = std::sqrt(box_area * a / (1.0 - a));
  double h = box_area / w;
  w = std::min(w, m.image_width);
  h = std::min(h, m.image_height);
  BoundingBox b;
  b.x_min = uni(rng) * (m.image_width - w);
  b.y_min = uni(rng) * (m.image_height - h);
  b.x_max = b.x_min + w;
  b.y_max = b.y_min + h;
  return b;
}

double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

}  // namespace

SynthOutput generate(const SceneModel& model, int n_images) {
  model.validate();
  const int K = model.num_classes;

  SynthOutput out;
  std::vector<std::int64_t> category_ids;
  for (int c = 1; c <= K; ++c) category_ids.push_back(c);
  out.gt.categories = CategoryMap(category_ids);

  std::int64_t det_id = 0;
  for (int i = 0; i < n_images; ++i) {
    const std::int64_t image_id = i + 1;
    std::mt19937_64 rng(mix(model.seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    GroundTruthImage img;
    img.meta = {model.image_width, model.image_height, image_id};

    const int anchor = static_cast<int>(uni(rng) * K) % K;
    std::vector<int> classes{anchor};
    for (int j = 0; j < K; ++j)
      if (j != anchor && uni(rng) < model.cooccurrence(anchor, j)) classes.push_back(j);

    std::vector<Detection> dets;
    for (int cls : classes) {
      const auto& prior = model.size_priors[cls];
      std::normal_distribution<double> gauss(0.0, 1.0);
      const double frac =
          prior.mean_area_frac * std::exp(prior.sigma_log * gauss(rng) -
                                          0.5 * prior.sigma_log * prior.sigma_log);
      GroundTruthAnnotation ann;
      ann.image_id = image_id;
      ann.class_label = cls + 1;
      ann.box = random_box(rng, model, frac);
      img.annotations.push_back(ann);

      // Simulated detector output: jittered box, possibly confused label.
      Detection d;
      d.image_id = image_id;
      d.box = ann.box;
      const double jx = model.box_jitter * ann.box.width();
      const double jy = model.box_jitter * ann.box.height();
      d.box.x_min = clampd(d.box.x_min + jx * gauss(rng), 0.0, model.image_width);
      d.box.x_max = clampd(d.box.x_max + jx * gauss(rng), 0.0, model.image_width);
      d.box.y_min = clampd(d.box.y_min + jy * gauss(rng), 0.0, model.image_height);
      d.box.y_max = clampd(d.box.y_max + jy * gauss(rng), 0.0, model.image_height);
      if (d.box.x_min > d.box.x_max) std::swap(d.box.x_min, d.box.x_max);
      if (d.box.y_min > d.box.y_max) std::swap(d.box.y_min, d.box.y_max);

      double u = uni(rng);
      int detected = K - 1;
      for (int c = 0; c < K; ++c) {
        u -= model.label_confusion(cls, c);
        if (u < 0) {
          detected = c;
          break;
        }
      }
      d.class_label = detected + 1;
      d.score = model.score_tp_min + (model.score_tp_max - model.score_tp_min) * uni(rng);
      d.bkg_score = 1.0 - d.score;
      d.detection_id = det_id++;
      dets.push_back(d);
    }

    std::poisson_distribution<int> spurious(model.spurious_rate);
    const int n_spurious = model.spurious_rate > 0 ? spurious(rng) : 0;
    for (int s = 0; s < n_spurious; ++s) {
      Detection d;
      d.image_id = image_id;
      d.box = random_box(rng, model, 0.003 + 0.05 * uni(rng));
      d.class_label = static_cast<int>(uni(rng) * K) % K + 1;
      d.score = model.score_fp_min + (model.score_fp_max - model.score_fp_min) * uni(rng);
      d.bkg_score = 1.0 - d.score;
      d.detection_id = det_id++;
      dets.push_back(d);
    }

    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (static_cast<int>(dets.size()) > kMaxDetectionsPerImage)
      dets.resize(kMaxDetectionsPerImage);

    out.gt.images[image_id] = std::move(img);
    out.detections[image_id] = std::move(dets);
  }
  return out;
}

std::string SceneModel::to_json() const {
  json j;
  j["num_classes"] = num_classes;
  j["image_width"] = image_width;
  j["image_height"] = image_height;
  j["cooccurrence"] = json::array();
  j["label_confusion"] = json::array();
  for (int r = 0; r < num_classes; ++r) {
    std::vector<double> co(num_classes), cf(num_classes);
    for (int c = 0; c < num_classes; ++c) {
      co[c] = cooccurrence(r, c);
      cf[c] = label_confusion(r, c);
    }
    j["cooccurrence"].push_back(co);
    j["label_confusion"].push_back(cf);
  }
  j["size_priors"] = json::array();
  for (const auto& p : size_priors)
    j["size_priors"].push_back({{"mean_area_frac", p.mean_area_frac},
                                {"sigma_log", p.sigma_log}});
  j["box_jitter"] = box_jitter;
  j["score_tp_min"] = score_tp_min;
  j["score_tp_max"] = score_tp_max;
  j["spurious_rate"] = spurious_rate;
  j["score_fp_min"] = score_fp_min;
  j["score_fp_max"] = score_fp_max;
  j["seed"] = seed;
  return j.dump(2);
}

SceneModel SceneModel::from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw SynthError("invalid scene model JSON");
  SceneModel m;
  m.num_classes = j.at("num_classes").get<int>();
  m.image_width = j.at("image_width").get<double>();
  m.image_height = j.at("image_height").get<double>();
  m.cooccurrence.resize(m.num_classes, m.num_classes);
  m.label_confusion.resize(m.num_classes, m.num_classes);
  for (int r = 0; r < m.num_classes; ++r)
    for (int c = 0; c < m.num_classes; ++c) {
      m.cooccurrence(r, c) = j.at("cooccurrence")[r][c].get<double>();
      m.label_confusion(r, c) = j.at("label_confusion")[r][c].get<double>();
    }
  m.size_priors.clear();
  for (const auto& p : j.at("size_priors"))
    m.size_priors.push_back(
        {p.at("mean_area_frac").get<double>(), p.at("sigma_log").get<double>()});
  m.box_jitter = j.at("box_jitter").get<double>();
  m.score_tp_min = j.at("score_tp_min").get<double>();
  m.score_tp_max = j.at("score_tp_max").get<double>();
  m.spurious_rate = j.at("spurious_rate").get<double>();
  m.score_fp_min = j.at("score_fp_min").get<double>();
  m.score_fp_max = j.at("score_fp_max").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.validate();
  return m;
}

}  // namespace detcal
