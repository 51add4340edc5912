#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "soco/geometry.hpp"
#include "soco/image.hpp"
#include "soco/rng.hpp"
#include "soco/tensor.hpp"

namespace soco {

// Scene generator knobs. Shape scales are relative (sqrt(wh)/image_size) and
// stay inside the proposal filter's [0.3, 0.8] band so every ground-truth box
// is a usable training proposal.
struct SceneConfig {
  int64_t image_size = 96;
  int shapes_min = 2;
  int shapes_max = 4;
  double iou_cap = 0.1;       // max IoU between any two placed shapes
  bool allow_ellipse = true;  // rectangles only when false
  bool gradient_fill = true;  // solid fills only when false
  double rel_scale_min = 0.35;
  double rel_scale_max = 0.6;
  double aspect_min = 0.6;
  double aspect_max = 1.8;
  double noise = 0.012;  // per-pixel texture amplitude
};

struct PlacedShape {
  std::string kind;  // "rect" or "ellipse"
  BBox bbox;
};

struct Scene {
  Tensor image;  // (3,S,S)
  std::vector<PlacedShape> shapes;
};

namespace detail {

// Colors are resampled until they contrast with the background in luma, so
// the segmenter has an edge to find.
inline void sample_shape_color(Rng& rng, double bg_luma, double rgb[3]) {
  for (int tries = 0; tries < 64; ++tries) {
    for (int c = 0; c < 3; ++c) rgb[c] = rng.uniform();
    double luma = kLumaR * rgb[0] + kLumaG * rgb[1] + kLumaB * rgb[2];
    if (std::abs(luma - bg_luma) >= 0.25) return;
  }
  for (int c = 0; c < 3; ++c) rgb[c] = bg_luma > 0.5 ? 0.1 : 0.9;
}

}  // namespace detail

// Deterministic low-contrast textured background with 2..5 contrasting solid
// or gradient shapes; ground-truth boxes lie inside the frame and overlap at
// most iou_cap pairwise.
inline Scene render_scene(const SceneConfig& cfg, Rng& rng) {
  const int64_t s = cfg.image_size;
  Scene scene;
  scene.image = Tensor({3, s, s});

  double base[3];
  double bg_luma = rng.uniform(0.35, 0.65);
  for (int c = 0; c < 3; ++c) base[c] = std::clamp(bg_luma + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0);
  double phx = rng.uniform(0.0, 2.0 * M_PI), phy = rng.uniform(0.0, 2.0 * M_PI);
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x) {
      double wave = 0.02 * std::sin(2.0 * M_PI * fx * x / static_cast<double>(s) + phx) +
                    0.02 * std::sin(2.0 * M_PI * fy * y / static_cast<double>(s) + phy);
      for (int64_t c = 0; c < 3; ++c)
        scene.image.at(c, y, x) = std::clamp(base[c] + wave, 0.0, 1.0);
    }

  int n_shapes = cfg.shapes_min + static_cast<int>(rng.uniform_int(cfg.shapes_max - cfg.shapes_min + 1));
  for (int i = 0; i < n_shapes; ++i) {
    double scale_hi = cfg.rel_scale_max;
    BBox box;
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      if (attempt > 0 && attempt % 100 == 0)
        scale_hi = std::max(cfg.rel_scale_min + 0.01, scale_hi * 0.85);
      double rel = rng.uniform(cfg.rel_scale_min, scale_hi);
      double aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
      double side = rel * static_cast<double>(s);
      double w = side * std::sqrt(aspect);
      double h = side / std::sqrt(aspect);
      if (w >= static_cast<double>(s) - 2.0 || h >= static_cast<double>(s) - 2.0) continue;
      double cx = rng.uniform(w / 2.0 + 1.0, static_cast<double>(s) - w / 2.0 - 1.0);
      double cy = rng.uniform(h / 2.0 + 1.0, static_cast<double>(s) - h / 2.0 - 1.0);
      box = BBox{cx, cy, w, h};
      placed = true;
      for (const PlacedShape& other : scene.shapes)
        if (iou(box, other.bbox) > cfg.iou_cap) {
          placed = false;
          break;
        }
    }
    if (!placed) break;

    bool ellipse = cfg.allow_ellipse && rng.bernoulli(0.5);
    double rgb0[3], rgb1[3];
    detail::sample_shape_color(rng, bg_luma, rgb0);
    bool gradient = cfg.gradient_fill && rng.bernoulli(0.5);
    for (int c = 0; c < 3; ++c)
      rgb1[c] = gradient ? std::clamp(rgb0[c] + rng.uniform(-0.15, 0.15), 0.0, 1.0) : rgb0[c];
    double gdir = rng.uniform(0.0, 2.0 * M_PI);

    int64_t x_lo = static_cast<int64_t>(std::floor(box.x0()));
    int64_t x_hi = static_cast<int64_t>(std::ceil(box.x1()));
    int64_t y_lo = static_cast<int64_t>(std::floor(box.y0()));
    int64_t y_hi = static_cast<int64_t>(std::ceil(box.y1()));
    for (int64_t y = std::max<int64_t>(0, y_lo); y < std::min(s, y_hi); ++y)
      for (int64_t x = std::max<int64_t>(0, x_lo); x < std::min(s, x_hi); ++x) {
        double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        if (px < box.x0() || px > box.x1() || py < box.y0() || py > box.y1()) continue;
        if (ellipse) {
          double nx = (px - box.x) / (box.w / 2.0);
          double ny = (py - box.y) / (box.h / 2.0);
          if (nx * nx + ny * ny > 1.0) continue;
        }
        double tval = 0.5;
        if (gradient) {
          tval = ((px - box.x) * std::cos(gdir) + (py - box.y) * std::sin(gdir)) /
                     std::max(box.w, box.h) + 0.5;
          tval = std::clamp(tval, 0.0, 1.0);
        }
        for (int64_t c = 0; c < 3; ++c)
          scene.image.at(c, y, x) = (1.0 - tval) * rgb0[c] + tval * rgb1[c];
      }
    scene.shapes.push_back(PlacedShape{ellipse ? "ellipse" : "rect", box});
  }

  if (cfg.noise > 0.0)
    for (double& v : scene.image.data)
      v = std::clamp(v + rng.uniform(-cfg.noise, cfg.noise), 0.0, 1.0);
  return scene;
}

}  // namespace soco
