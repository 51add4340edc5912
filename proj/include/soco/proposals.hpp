#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "soco/errors.hpp"
#include "soco/geometry.hpp"
#include "soco/rng.hpp"

namespace soco {

// Keeps boxes with aspect ratio w/h in [1/3, 3] and relative scale
// sqrt(wh)/sqrt(WH) in [0.3, 0.8], bounds inclusive. Order preserved.
inline std::vector<BBox> filter_proposals(const std::vector<BBox>& boxes, double image_w,
                                          double image_h) {
  check_input(image_w > 0.0 && image_h > 0.0, "filter_proposals: empty image frame");
  std::vector<BBox> kept;
  kept.reserve(boxes.size());
  double frame = std::sqrt(image_w * image_h);
  for (const BBox& b : boxes) {
    if (b.w <= 0.0 || b.h <= 0.0) continue;
    double aspect = b.w / b.h;
    double rel = std::sqrt(b.w * b.h) / frame;
    if (aspect >= 1.0 / 3.0 && aspect <= 3.0 && rel >= 0.3 && rel <= 0.8) kept.push_back(b);
  }
  return kept;
}

// Fallback proposal when nothing survives filtering: centered box covering a
// quarter of the frame. Training must not stall on proposal-free images.
inline BBox fallback_box(double image_w, double image_h) {
  return BBox{0.5 * image_w, 0.5 * image_h, 0.5 * image_w, 0.5 * image_h};
}

// Draws exactly k proposals: without replacement when enough are available,
// with replacement when some exist but fewer than k, and k fallback boxes when
// the list is empty.
inline std::vector<BBox> sample_proposals(const std::vector<BBox>& boxes, int k, Rng& rng,
                                          double image_w, double image_h) {
  check_input(k >= 1, "sample_proposals: k must be >= 1");
  std::vector<BBox> out;
  out.reserve(static_cast<size_t>(k));
  if (boxes.empty()) {
    out.assign(static_cast<size_t>(k), fallback_box(image_w, image_h));
    return out;
  }
  int64_t n = static_cast<int64_t>(boxes.size());
  if (n >= k) {
    // Partial Fisher-Yates over an index array.
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
      int64_t j = i + rng.uniform_int(n - i);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      out.push_back(boxes[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
    }
  } else {
    for (int i = 0; i < k; ++i) out.push_back(boxes[static_cast<size_t>(rng.uniform_int(n))]);
  }
  return out;
}

struct JitterParams {
  bool enabled = true;
  double prob = 0.5;
  double ratio = 0.1;     // r drawn uniformly from [-ratio, ratio]
  bool shared_r = false;  // one r for all four components instead of four draws
};

// Randomly perturbs center and size relative to the box's own dimensions:
// x+r1*w, y+r2*h, w+r3*w, h+r4*h. Applied with probability `prob`; identity
// otherwise. The four r are independent unless shared_r is set.
inline BBox jitter_box(const BBox& box, Rng& rng, const JitterParams& p = {}) {
  if (!p.enabled || !rng.bernoulli(p.prob)) return box;
  double r1 = rng.uniform(-p.ratio, p.ratio);
  double r2 = p.shared_r ? r1 : rng.uniform(-p.ratio, p.ratio);
  double r3 = p.shared_r ? r1 : rng.uniform(-p.ratio, p.ratio);
  double r4 = p.shared_r ? r1 : rng.uniform(-p.ratio, p.ratio);
  return BBox{box.x + r1 * box.w, box.y + r2 * box.h, box.w + r3 * box.w, box.h + r4 * box.h};
}

}  // namespace soco
