#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace detcal {

/// Axis-aligned box in continuous pixel coordinates, origin top-left.
/// Closed intervals: a box with x_min == x_max is a valid degenerate box.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
  }

  bool operator==(const BoundingBox&) const = default;
};

struct ImageMeta {
  double width = 0.0;
  double height = 0.0;
  std::int64_t image_id = 0;

  double diagonal() const { return std::hypot(width, height); }
};

inline double area(const BoundingBox& b) { return b.width() * b.height(); }

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return std::max(0.0, w) * std::max(0.0, h);
}

/// Eq.-style IoU; 0 when the union has zero area (both boxes degenerate).
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct OverlapRatios {
  double iou = 0.0;
  double inter_over_a = 0.0;  // intersection / area(a)
  double inter_over_b = 0.0;  // intersection / area(b)
};

inline OverlapRatios overlap_ratios(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double area_a = area(a);
  const double area_b = area(b);
  const double uni = area_a + area_b - inter;
  OverlapRatios r;
  r.iou = uni > 0.0 ? inter / uni : 0.0;
  r.inter_over_a = area_a > 0.0 ? inter / area_a : 0.0;
  r.inter_over_b = area_b > 0.0 ? inter / area_b : 0.0;
  return r;
}

struct DistanceAngle {
  double distance = 0.0;
  double angle = 0.0;  // radians in (-pi, pi]; 0 when centers coincide
};

inline DistanceAngle distance_angle(const BoundingBox& a, const BoundingBox& b) {
  const double dx = b.center_x() - a.center_x();
  const double dy = b.center_y() - a.center_y();
  DistanceAngle da;
  da.distance = std::hypot(dx, dy);
  da.angle = (dx == 0.0 && dy == 0.0) ? 0.0 : std::atan2(dy, dx);
  return da;
}

struct EdgeFlags {
  bool left = false;
  bool right = false;
  bool top = false;
  bool bottom = false;
};

/// True when the corresponding box side lies within tol pixels of the
/// image border.
inline EdgeFlags edge_flags(const BoundingBox& b, const ImageMeta& img, double tol = 1.0) {
  EdgeFlags f;
  f.left = std::abs(b.x_min - 0.0) <= tol;
  f.right = std::abs(b.x_max - img.width) <= tol;
  f.top = std::abs(b.y_min - 0.0) <= tol;
  f.bottom = std::abs(b.y_max - img.height) <= tol;
  return f;
}

/// Bounded aspect w/(w+h) in (0,1); 0.5 when both sides are zero.
inline double aspect(double width, double height) {
  const double s = width + height;
  return s > 0.0 ? width / s : 0.5;
}

inline double aspect(const BoundingBox& b) { return aspect(b.width(), b.height()); }
inline double aspect(const ImageMeta& img) { return aspect(img.width, img.height); }

}  // namespace detcal
