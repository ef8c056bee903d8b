#include "detcal/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "detcal/persistence.hpp"

namespace detcal {

using nlohmann::json;

namespace {

json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError("invalid JSON in " + path);
  return j;
}

BoundingBox corner_box(const json& xywh, const std::string& where) {
  if (!xywh.is_array() || xywh.size() != 4)
    throw ParseError("bbox must be [x, y, w, h] in " + where);
  BoundingBox b;
  b.x_min = xywh[0].get<double>();
  b.y_min = xywh[1].get<double>();
  b.x_max = b.x_min + xywh[2].get<double>();
  b.y_max = b.y_min + xywh[3].get<double>();
  if (!b.valid()) throw ParseError("invalid bbox in " + where);
  return b;
}

}  // namespace

CategoryMap::CategoryMap(std::vector<std::int64_t> sorted_coco_ids)
    : coco_ids_(std::move(sorted_coco_ids)) {
  std::sort(coco_ids_.begin(), coco_ids_.end());
  for (int i = 0; i < static_cast<int>(coco_ids_.size()); ++i)
    to_contiguous_[coco_ids_[i]] = i + 1;
}

int CategoryMap::to_contiguous(std::int64_t coco_id) const {
  auto it = to_contiguous_.find(coco_id);
  if (it == to_contiguous_.end())
    throw UnknownCategoryError("unknown category id " + std::to_string(coco_id));
  return it->second;
}

std::int64_t CategoryMap::to_coco(int contiguous) const {
  if (contiguous < 1 || contiguous > size())
    throw UnknownCategoryError("contiguous label out of range: " + std::to_string(contiguous));
  return coco_ids_[contiguous - 1];
}

void CategoryMap::save(const std::string& path) const {
  json j;
  j["category_ids"] = coco_ids_;  // index i -> contiguous label i+1
  write_file_atomic(path, j.dump(2) + "\n");
}

CategoryMap CategoryMap::load(const std::string& path) {
  json j = parse_file(path);
  if (!j.contains("category_ids")) throw ParseError("missing category_ids in " + path);
  return CategoryMap(j["category_ids"].get<std::vector<std::int64_t>>());
}

GroundTruth load_ground_truth(const std::string& path) {
  json j = parse_file(path);
  for (const char* key : {"images", "annotations", "categories"})
    if (!j.contains(key) || !j[key].is_array())
      throw ParseError(std::string("missing '") + key + "' array in " + path);

  std::vector<std::int64_t> category_ids;
  for (const auto& c : j["categories"]) category_ids.push_back(c.at("id").get<std::int64_t>());

  GroundTruth gt;
  gt.categories = CategoryMap(std::move(category_ids));

  for (const auto& im : j["images"]) {
    ImageMeta meta;
    meta.image_id = im.at("id").get<std::int64_t>();
    meta.width = im.at("width").get<double>();
    meta.height = im.at("height").get<double>();
    if (meta.width <= 0 || meta.height <= 0)
      throw BadImageError("nonpositive dimensions for image id " +
                          std::to_string(meta.image_id));
    gt.images[meta.image_id].meta = meta;
  }

  for (const auto& a : j["annotations"]) {
    GroundTruthAnnotation ann;
    ann.image_id = a.at("image_id").get<std::int64_t>();
    const std::string where =
        "annotation id " + (a.contains("id") ? a["id"].dump() : std::string("?"));
    ann.box = corner_box(a.at("bbox"), where);
    ann.class_label = gt.categories.to_contiguous(a.at("category_id").get<std::int64_t>());
    if (area(ann.box) == 0.0)
      std::cerr << "warning: degenerate ground-truth box in " << where << "\n";
    auto it = gt.images.find(ann.image_id);
    if (it == gt.images.end())
      throw UnknownImageError("annotation references unknown image id " +
                              std::to_string(ann.image_id));
    it->second.annotations.push_back(ann);
  }
  return gt;
}

DetectionMap load_detections(const std::string& path, const CategoryMap& categories,
                             const GroundTruth* validate_against) {
  json j = parse_file(path);
  if (!j.is_array()) throw ParseError("results file must be a JSON array: " + path);

  DetectionMap dets;
  std::set<std::int64_t> unknown;
  std::int64_t running_id = 0;
  for (const auto& r : j) {
    Detection d;
    d.image_id = r.at("image_id").get<std::int64_t>();
    d.box = corner_box(r.at("bbox"), "result record " + std::to_string(running_id));
    d.class_label = categories.to_contiguous(r.at("category_id").get<std::int64_t>());
    d.score = r.at("score").get<double>();
    d.bkg_score = r.contains("bkg_score") ? r["bkg_score"].get<double>() : 1.0 - d.score;
    d.detection_id = r.contains("id") ? r["id"].get<std::int64_t>() : running_id;
    ++running_id;
    if (validate_against && !validate_against->images.count(d.image_id)) {
      unknown.insert(d.image_id);
      continue;
    }
    if (d.score < kScoreFloor) continue;
    dets[d.image_id].push_back(d);
  }
  if (!unknown.empty()) {
    std::ostringstream msg;
    msg << "detections reference unknown image ids:";
    for (auto id : unknown) msg << ' ' << id;
    throw UnknownImageError(msg.str());
  }
  for (auto& [id, list] : dets) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (static_cast<int>(list.size()) > kMaxDetectionsPerImage)
      list.resize(kMaxDetectionsPerImage);
  }
  return dets;
}

void save_detections(const DetectionMap& dets, const CategoryMap& categories,
                     const std::string& path) {
  json out = json::array();
  for (const auto& [image_id, list] : dets) {
    for (const auto& d : list) {
      json r;
      r["image_id"] = d.image_id;
      r["category_id"] = categories.to_coco(d.class_label);
      r["bbox"] = {d.box.x_min, d.box.y_min, d.box.width(), d.box.height()};
      r["score"] = d.score;
      r["bkg_score"] = d.bkg_score;
      r["id"] = d.detection_id;
      out.push_back(std::move(r));
    }
  }
  write_file_atomic(path, out.dump() + "\n");
}

void save_ground_truth(const GroundTruth& gt, const std::string& path) {
  json out;
  out["images"] = json::array();
  out["annotations"] = json::array();
  out["categories"] = json::array();
  for (int c = 1; c <= gt.categories.size(); ++c)
    out["categories"].push_back({{"id", gt.categories.to_coco(c)},
                                 {"name", "class_" + std::to_string(gt.categories.to_coco(c))}});
  std::int64_t ann_id = 1;
  for (const auto& [image_id, im] : gt.images) {
    out["images"].push_back(
        {{"id", image_id}, {"width", im.meta.width}, {"height", im.meta.height}});
    for (const auto& a : im.annotations) {
      out["annotations"].push_back({{"id", ann_id++},
                                    {"image_id", a.image_id},
                                    {"category_id", gt.categories.to_coco(a.class_label)},
                                    {"bbox", {a.box.x_min, a.box.y_min, a.box.width(),
                                              a.box.height()}},
                                    {"area", area(a.box)},
                                    {"iscrowd", 0}});
    }
  }
  write_file_atomic(path, out.dump() + "\n");
}

std::vector<LabeledExample> assign_truth_labels(const DetectionMap& dets,
                                                const GroundTruth& gt) {
  std::vector<LabeledExample> out;
  for (const auto& [image_id, list] : dets) {
    auto img = gt.images.find(image_id);
    for (int i = 0; i < static_cast<int>(list.size()); ++i) {
      LabeledExample ex;
      ex.image_id = image_id;
      ex.target_index = i;
      ex.truth_label = 0;
      if (img != gt.images.end()) {
        double best_iou = 0.5;  // strict: must exceed 0.5
        for (const auto& ann : img->second.annotations) {
          const double v = iou(list[i].box, ann.box);
          if (v > best_iou) {
            best_iou = v;
            ex.truth_label = ann.class_label;
          }
        }
      }
      out.push_back(ex);
    }
  }
  return out;
}

std::vector<LabeledExample> downsample_background(const std::vector<LabeledExample>& examples,
                                                  int factor, std::uint64_t seed) {
  if (factor < 1) throw DatasetError("downsample factor must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<LabeledExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.truth_label != 0) {
      out.push_back(ex);
      continue;
    }
    if (uni(rng) * factor < 1.0) out.push_back(ex);
  }
  return out;
}

void save_labeled_examples(const std::vector<LabeledExample>& examples,
                           const std::string& path) {
  std::ostringstream os;
  for (const auto& ex : examples) {
    json r{{"image_id", ex.image_id},
           {"target_index", ex.target_index},
           {"truth_label", ex.truth_label}};
    os << r.dump() << '\n';
  }
  write_file_atomic(path, os.str());
}

std::vector<LabeledExample> load_labeled_examples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<LabeledExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r = json::parse(line, nullptr, false);
    if (r.is_discarded()) throw ParseError("invalid JSON line in " + path);
    out.push_back({r.at("image_id").get<std::int64_t>(), r.at("target_index").get<int>(),
                   r.at("truth_label").get<int>()});
  }
  return out;
}

}  // namespace detcal
