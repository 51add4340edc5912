#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "soco/errors.hpp"

namespace soco {

// Center-format box {x, y, w, h} in continuous pixel coordinates.
struct BBox {
  double x = 0.0;  // center x
  double y = 0.0;  // center y
  double w = 0.0;
  double h = 0.0;

  double x0() const { return x - 0.5 * w; }
  double y0() const { return y - 0.5 * h; }
  double x1() const { return x + 0.5 * w; }
  double y1() const { return y + 0.5 * h; }
  double area() const { return w * h; }

  static BBox from_corners(double x0, double y0, double x1, double y1) {
    return BBox{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }
};

inline bool operator==(const BBox& a, const BBox& b) {
  return a.x == b.x && a.y == b.y && a.w == b.w && a.h == b.h;
}

inline double iou(const BBox& a, const BBox& b) {
  double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Records how a view was cut out of its source image: crop rectangle in source
// coordinates, output resolution, and whether the result was mirrored. Boxes
// follow the same map as pixels, which is what keeps object correspondence
// intact across views.
struct ViewTransform {
  double crop_x = 0.0;
  double crop_y = 0.0;
  double crop_w = 0.0;
  double crop_h = 0.0;
  double out_w = 0.0;
  double out_h = 0.0;
  bool hflip = false;

  static ViewTransform identity(double w, double h) {
    return ViewTransform{0.0, 0.0, w, h, w, h, false};
  }

  double scale_x() const { return out_w / crop_w; }
  double scale_y() const { return out_h / crop_h; }
};

// Crop-translate-then-scale affine map of a center-format box, with optional
// horizontal mirror. No containment check; see transform_box for the drop rule.
inline BBox apply_transform(const BBox& b, const ViewTransform& t) {
  double sx = t.scale_x();
  double sy = t.scale_y();
  BBox out{(b.x - t.crop_x) * sx, (b.y - t.crop_y) * sy, b.w * sx, b.h * sy};
  if (t.hflip) out.x = t.out_w - out.x;
  return out;
}

// Tolerance for containment tests: a box sitting exactly on the crop edge must
// survive the float round-trip through the affine map.
inline constexpr double kContainEps = 1e-9;

inline bool box_inside(const BBox& b, double w, double h, double eps = kContainEps) {
  return b.x0() >= -eps && b.y0() >= -eps && b.x1() <= w + eps && b.y1() <= h + eps;
}

// Maps a box into view coordinates; returns nullopt when the result is not
// fully contained in the output view (the transformed proposal is dropped).
inline std::optional<BBox> transform_box(const BBox& b, const ViewTransform& t) {
  check_input(b.w > 0.0 && b.h > 0.0, "transform_box: degenerate box");
  BBox out = apply_transform(b, t);
  if (!box_inside(out, t.out_w, t.out_h)) return std::nullopt;
  return out;
}

// Composition of two view transforms (first a, then b) as a single transform.
// Only valid when neither step mirrors or both do not; the training pipeline
// composes geometry before the flip augmentation, so that is the case here.
inline ViewTransform compose(const ViewTransform& a, const ViewTransform& b) {
  check_input(!a.hflip && !b.hflip, "compose: flip must be applied last");
  ViewTransform c;
  c.crop_x = a.crop_x + b.crop_x / a.scale_x();
  c.crop_y = a.crop_y + b.crop_y / a.scale_y();
  c.crop_w = b.crop_w / a.scale_x();
  c.crop_h = b.crop_h / a.scale_y();
  c.out_w = b.out_w;
  c.out_h = b.out_h;
  return c;
}

}  // namespace soco
