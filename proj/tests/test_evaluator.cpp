#include <doctest.h>

#include <random>

#include "detcal/evaluator.hpp"
#include "oracles.hpp"

using namespace detcal;

namespace {

GroundTruth make_gt(int num_classes) {
  GroundTruth gt;
  std::vector<std::int64_t> ids(num_classes);
  for (int c = 0; c < num_classes; ++c) ids[c] = c + 1;
  gt.categories = CategoryMap(std::move(ids));
  return gt;
}

void add_gt(GroundTruth& gt, std::int64_t image_id, BoundingBox box, int cls) {
  auto& im = gt.images[image_id];
  im.meta = {1000, 1000, image_id};
  im.annotations.push_back({image_id, box, cls});
}

Detection make_det(std::int64_t image_id, BoundingBox box, int cls, double score,
                   std::int64_t id) {
  return {image_id, box, cls, score, 1.0 - score, id};
}

}  // namespace

TEST_CASE("classification report") {
  //            truth: 1 1 2 2 0
  //        predicted: 1 2 2 2 0
  const std::vector<int> truth{1, 1, 2, 2, 0};
  const std::vector<int> pred{1, 2, 2, 2, 0};
  const auto r = classification_report(pred, truth, 3);
  REQUIRE(r.per_class.size() == 3);
  CHECK(r.per_class[0].precision == 1.0);
  CHECK(r.per_class[0].recall == 1.0);
  CHECK(r.per_class[1].precision == 1.0);
  CHECK(r.per_class[1].recall == 0.5);
  CHECK(r.per_class[1].f1 == doctest::Approx(2.0 / 3.0));
  CHECK(r.per_class[2].precision == doctest::Approx(2.0 / 3.0));
  CHECK(r.per_class[2].recall == 1.0);
  CHECK(r.per_class[2].f1 == doctest::Approx(0.8));
  CHECK(r.macro.f1 == doctest::Approx((1.0 + 2.0 / 3.0 + 0.8) / 3.0));

  SUBCASE("absent classes contribute zeros") {
    const auto r4 = classification_report(pred, truth, 4);
    CHECK(r4.per_class[3].f1 == 0.0);
    CHECK(r4.macro.f1 == doctest::Approx((1.0 + 2.0 / 3.0 + 0.8) / 4.0));
  }

  SUBCASE("perfect predictions") {
    const auto p = classification_report(truth, truth, 3);
    CHECK(p.macro.f1 == 1.0);
    CHECK(p.macro.precision == 1.0);
    CHECK(p.macro.recall == 1.0);
  }

  SUBCASE("length mismatch throws") {
    CHECK_THROWS((void)classification_report({1, 2}, {1}, 3));
  }
}

TEST_CASE("ap on a crafted two-image case") {
  // class 1: three GT boxes; detections are a 0.9 TP, a 0.8 FP and a
  // 0.7 TP. Precision points (1, 1/2, 2/3) at recalls (1/3, 1/3, 2/3):
  // interpolated envelope gives 34 samples at 1 and 33 at 2/3,
  // AP50 = (34 + 22) / 101 = 56/101.
  auto gt = make_gt(1);
  add_gt(gt, 1, {0, 0, 10, 10}, 1);
  add_gt(gt, 1, {100, 100, 110, 110}, 1);
  add_gt(gt, 2, {0, 0, 10, 10}, 1);

  DetectionMap dets;
  dets[1] = {make_det(1, {0, 0, 10, 10}, 1, 0.9, 0),
             make_det(1, {500, 500, 510, 510}, 1, 0.8, 1)};
  dets[2] = {make_det(2, {0, 0, 10, 10}, 1, 0.7, 0)};

  const auto r = coco_ap(dets, gt);
  CHECK(r.ap50 == doctest::Approx(56.0 / 101.0).epsilon(1e-12));
  CHECK(r.ap75 == doctest::Approx(56.0 / 101.0).epsilon(1e-12));
  CHECK(r.ap == doctest::Approx(56.0 / 101.0).epsilon(1e-12));

  const auto naive = oracles::naive_coco_ap(dets, gt);
  CHECK(r.ap50 == doctest::Approx(naive.ap50).epsilon(1e-12));
}

TEST_CASE("matching rules") {
  SUBCASE("iou exactly at threshold matches") {
    auto gt = make_gt(1);
    add_gt(gt, 1, {0, 0, 10, 5}, 1);
    DetectionMap dets;
    dets[1] = {make_det(1, {0, 0, 10, 10}, 1, 0.9, 0)};  // IoU 0.5
    const auto r = coco_ap(dets, gt);
    CHECK(r.ap50 == doctest::Approx(1.0));
    CHECK(r.ap75 == 0.0);
  }

  SUBCASE("each gt matches at most once") {
    auto gt = make_gt(1);
    add_gt(gt, 1, {0, 0, 10, 10}, 1);
    DetectionMap dets;
    dets[1] = {make_det(1, {0, 0, 10, 10}, 1, 0.9, 0),
               make_det(1, {0, 0, 10, 10}, 1, 0.8, 1)};  // duplicate: FP
    const auto r = coco_ap(dets, gt);
    // precision points 1 then 1/2 at recall 1: envelope is flat 1
    CHECK(r.ap50 == doctest::Approx(1.0));
  }

  SUBCASE("higher score matches first") {
    auto gt = make_gt(1);
    add_gt(gt, 1, {0, 0, 10, 10}, 1);
    DetectionMap dets;
    // the low-score detection overlaps better, but the high-score one
    // claims the GT first and wins it
    dets[1] = {make_det(1, {0, 0, 10, 9}, 1, 0.9, 0),
               make_det(1, {0, 0, 10, 10}, 1, 0.8, 1)};
    const auto naive = oracles::naive_coco_ap(dets, gt);
    CHECK(coco_ap(dets, gt).ap50 == doctest::Approx(naive.ap50).epsilon(1e-12));
  }

  SUBCASE("wrong class never matches") {
    auto gt = make_gt(2);
    add_gt(gt, 1, {0, 0, 10, 10}, 1);
    DetectionMap dets;
    dets[1] = {make_det(1, {0, 0, 10, 10}, 2, 0.9, 0)};
    const auto r = coco_ap(dets, gt);
    CHECK(r.ap50 == 0.0);
  }

  SUBCASE("classes without gt are excluded from the mean") {
    auto gt = make_gt(3);  // only class 1 has GT
    add_gt(gt, 1, {0, 0, 10, 10}, 1);
    DetectionMap dets;
    dets[1] = {make_det(1, {0, 0, 10, 10}, 1, 0.9, 0)};
    CHECK(coco_ap(dets, gt).ap50 == doctest::Approx(1.0));
  }
}

TEST_CASE("size buckets") {
  auto gt = make_gt(1);
  add_gt(gt, 1, {0, 0, 10, 10}, 1);      // area 100: small
  add_gt(gt, 1, {100, 100, 150, 150}, 1); // area 2500: medium
  add_gt(gt, 1, {300, 300, 400, 400}, 1); // area 10000: large

  DetectionMap dets;
  dets[1] = {make_det(1, {0, 0, 10, 10}, 1, 0.9, 0),
             make_det(1, {100, 100, 150, 150}, 1, 0.8, 1),
             make_det(1, {300, 300, 400, 400}, 1, 0.7, 2)};
  const auto r = coco_ap(dets, gt);
  CHECK(r.ap_small == doctest::Approx(1.0));
  CHECK(r.ap_medium == doctest::Approx(1.0));
  CHECK(r.ap_large == doctest::Approx(1.0));

  SUBCASE("an unmatched detection counts against every bucket") {
    dets[1].push_back(make_det(1, {700, 700, 710, 710}, 1, 0.95, 3));
    const auto r2 = coco_ap(dets, gt);
    CHECK(r2.ap_small < 1.0);
    CHECK(r2.ap_large < 1.0);
  }
}

TEST_CASE("random micro-scenes agree with the naive oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int num_classes = 1 + static_cast<int>(rng() % 3);
    auto gt = make_gt(num_classes);
    DetectionMap dets;
    const int n_images = 1 + static_cast<int>(rng() % 3);
    for (int im = 1; im <= n_images; ++im) {
      const int n_gt = static_cast<int>(rng() % 4);
      for (int g = 0; g < n_gt; ++g) {
        const double x = uni(rng) * 100, y = uni(rng) * 100;
        add_gt(gt, im, {x, y, x + 5 + uni(rng) * 20, y + 5 + uni(rng) * 20},
               1 + static_cast<int>(rng() % num_classes));
      }
      if (n_gt == 0) gt.images[im].meta = {1000, 1000, im};
      const int n_det = static_cast<int>(rng() % 6);
      for (int d = 0; d < n_det; ++d) {
        BoundingBox box;
        if (!gt.images[im].annotations.empty() && uni(rng) < 0.6) {
          // perturb a GT box so near-threshold IoUs occur
          const auto& base =
              gt.images[im].annotations[rng() % gt.images[im].annotations.size()].box;
          const double j = uni(rng) * 8 - 4;
          box = {base.x_min + j, base.y_min, base.x_max, base.y_max + j};
          if (!box.valid()) box = base;
        } else {
          const double x = uni(rng) * 100, y = uni(rng) * 100;
          box = {x, y, x + 5 + uni(rng) * 20, y + 5 + uni(rng) * 20};
        }
        dets[im].push_back(make_det(im, box, 1 + static_cast<int>(rng() % num_classes),
                                    0.05 + 0.95 * uni(rng), d));
      }
    }
    const auto fast = coco_ap(dets, gt);
    const auto naive = oracles::naive_coco_ap(dets, gt);
    REQUIRE(std::abs(fast.ap - naive.ap) <= 1e-9);
    REQUIRE(std::abs(fast.ap50 - naive.ap50) <= 1e-9);
    REQUIRE(std::abs(fast.ap75 - naive.ap75) <= 1e-9);
  }
}

TEST_CASE("report rendering") {
  ApReport r;
  r.ap = 0.5;
  r.ap50 = 0.75;
  const auto json = ap_report_json(r);
  CHECK(json.find("\"AP50\"") != std::string::npos);
  const auto table = ap_report_table(r);
  CHECK(table.find("75.0") != std::string::npos);  // displayed x100

  const auto cr = classification_report({1, 0}, {1, 1}, 2);
  CHECK(!classification_report_table(cr).empty());
}
