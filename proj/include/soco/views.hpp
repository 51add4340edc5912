#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "soco/errors.hpp"
#include "soco/geometry.hpp"
#include "soco/image.hpp"
#include "soco/proposals.hpp"
#include "soco/rng.hpp"
#include "soco/tensor.hpp"

namespace soco {

// One augmented copy of an image: pixels, the surviving proposals in view
// coordinates, and the affine record mapping original-image coordinates into
// this view.
struct View {
  Tensor image;                              // (3, H, W) in [0,1]
  std::vector<std::pair<int, BBox>> boxes;   // (proposal_id, box in view coords)
  ViewTransform transform;                   // original image -> view
};

struct ViewConfig {
  int64_t v1_size = 64;
  int64_t v3_size = 32;   // V3 is V2 downsampled to this fixed resolution
  int64_t v4_size = 64;
  bool enable_v3 = true;  // discarded in the C4 configuration
  bool enable_v4 = false; // the starred variant adds a second crop view
  double crop_area_min = 0.5;
  double crop_area_max = 1.0;
  double crop_aspect_min = 3.0 / 4.0;
  double crop_aspect_max = 4.0 / 3.0;
  int crop_retries = 10;
  // Clip partially-overlapping proposals to the view instead of dropping
  // them. Off by default: the drop rule keeps the object intact in every
  // view the loss sees.
  bool clip_partial = false;
  JitterParams jitter;
};

struct ViewSet {
  // views[0] is V1; the rest follow in {V2, V3, V4} order for the enabled set.
  std::vector<View> views;
  std::vector<int> common_ids;  // proposal ids surviving in every view
};

namespace detail {

// Crop rectangle with area fraction in [area_min, area_max] of the frame and
// aspect ratio in [aspect_min, aspect_max], clamped to the frame instead of
// rejection-sampled.
inline ViewTransform sample_crop(double frame, const ViewConfig& cfg, double out_size, Rng& rng) {
  double area = rng.uniform(cfg.crop_area_min, cfg.crop_area_max) * frame * frame;
  double aspect = rng.uniform(cfg.crop_aspect_min, cfg.crop_aspect_max);
  double cw = std::min(std::sqrt(area * aspect), frame);
  double ch = std::min(std::sqrt(area / aspect), frame);
  double x0 = rng.uniform(0.0, frame - cw);
  double y0 = rng.uniform(0.0, frame - ch);
  return ViewTransform{x0, y0, cw, ch, out_size, out_size, false};
}

inline std::optional<BBox> clip_box(const BBox& b, double w, double h) {
  double x0 = std::max(b.x0(), 0.0), y0 = std::max(b.y0(), 0.0);
  double x1 = std::min(b.x1(), w), y1 = std::min(b.y1(), h);
  if (x1 - x0 < 1e-6 || y1 - y0 < 1e-6) return std::nullopt;
  return BBox::from_corners(x0, y0, x1, y1);
}

inline View make_view(const Tensor& source, const ViewTransform& rel,
                      const ViewTransform& source_from_orig,
                      const std::vector<std::pair<int, BBox>>& source_boxes, bool clip_partial) {
  View v;
  v.image = crop_resize(source, rel.crop_x, rel.crop_y, rel.crop_w, rel.crop_h,
                        static_cast<int64_t>(rel.out_h), static_cast<int64_t>(rel.out_w));
  v.transform = compose(source_from_orig, rel);
  for (const auto& [id, box] : source_boxes) {
    if (auto mapped = transform_box(box, rel)) {
      v.boxes.emplace_back(id, *mapped);
    } else if (clip_partial) {
      if (auto clipped = clip_box(apply_transform(box, rel), rel.out_w, rel.out_h))
        v.boxes.emplace_back(id, *clipped);
    }
  }
  return v;
}

}  // namespace detail

// Builds V1 (resize to v1_size), V2 (random crop of V1, same resolution), V3
// (V2 downsampled) and optionally V4 (independent crop of V1). Proposals are
// dropped from a view unless fully contained; the set of ids used downstream
// is the intersection of survivors across all views. If that intersection is
// empty the crops are resampled up to crop_retries times, then replaced by
// full-frame crops. Box jitter is applied per view independently afterwards;
// a jittered box that would leave its view reverts to the unjittered one so
// containment and the common id set are preserved.
inline ViewSet build_views(const Tensor& image, const std::vector<BBox>& sampled_boxes,
                           const ViewConfig& cfg, Rng& rng) {
  check_image(image);
  check_input(!sampled_boxes.empty(), "build_views: no sampled proposals");
  const double w0 = static_cast<double>(img_w(image));
  const double h0 = static_cast<double>(img_h(image));
  const double s1 = static_cast<double>(cfg.v1_size);

  View v1;
  v1.transform = ViewTransform{0.0, 0.0, w0, h0, s1, s1, false};
  v1.image = resize(image, cfg.v1_size, cfg.v1_size);
  for (size_t i = 0; i < sampled_boxes.size(); ++i)
    if (auto mapped = transform_box(sampled_boxes[i], v1.transform))
      v1.boxes.emplace_back(static_cast<int>(i), *mapped);

  auto attempt = [&](bool full_frame) {
    std::vector<View> views;
    views.push_back(v1);
    ViewTransform crop2 = full_frame ? ViewTransform::identity(s1, s1)
                                     : detail::sample_crop(s1, cfg, s1, rng);
    views.push_back(detail::make_view(v1.image, crop2, v1.transform, v1.boxes, cfg.clip_partial));
    if (cfg.enable_v3) {
      const View& v2 = views.back();
      double s3 = static_cast<double>(cfg.v3_size);
      ViewTransform down{0.0, 0.0, s1, s1, s3, s3, false};
      views.push_back(detail::make_view(v2.image, down, v2.transform, v2.boxes, cfg.clip_partial));
    }
    if (cfg.enable_v4) {
      ViewTransform crop4 = full_frame
                                ? ViewTransform{0.0, 0.0, s1, s1,
                                                static_cast<double>(cfg.v4_size),
                                                static_cast<double>(cfg.v4_size), false}
                                : detail::sample_crop(s1, cfg, static_cast<double>(cfg.v4_size), rng);
      views.push_back(detail::make_view(v1.image, crop4, v1.transform, v1.boxes, cfg.clip_partial));
    }
    return views;
  };
  auto intersect_ids = [](const std::vector<View>& views) {
    std::vector<int> common;
    for (const auto& [id, box] : views.front().boxes) {
      bool everywhere = true;
      for (size_t v = 1; v < views.size() && everywhere; ++v) {
        bool found = false;
        for (const auto& [id2, box2] : views[v].boxes)
          if (id2 == id) {
            found = true;
            break;
          }
        everywhere = found;
      }
      if (everywhere) common.push_back(id);
    }
    return common;
  };

  ViewSet out;
  for (int tries = 0; tries <= cfg.crop_retries; ++tries) {
    bool full_frame = tries == cfg.crop_retries;
    out.views = attempt(full_frame);
    out.common_ids = intersect_ids(out.views);
    if (!out.common_ids.empty()) break;
  }

  for (View& v : out.views) {
    std::vector<std::pair<int, BBox>> kept;
    for (const auto& [id, box] : v.boxes) {
      bool common = false;
      for (int c : out.common_ids)
        if (c == id) {
          common = true;
          break;
        }
      if (!common) continue;
      BBox jittered = jitter_box(box, rng, cfg.jitter);
      if (!box_inside(jittered, v.transform.out_w, v.transform.out_h)) jittered = box;
      kept.emplace_back(id, jittered);
    }
    v.boxes = std::move(kept);
  }
  return out;
}

}  // namespace soco
