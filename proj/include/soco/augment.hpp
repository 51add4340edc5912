#pragma once

#include <algorithm>
#include <cmath>

#include "soco/image.hpp"
#include "soco/rng.hpp"
#include "soco/views.hpp"

namespace soco {

// Photometric augmentation recipe. Blur and solarization are asymmetric
// between the two branch pipelines; everything else is shared.
struct AugmentParams {
  double hflip_prob = 0.5;
  double color_jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.2;
  double hue = 0.1;
  double grayscale_prob = 0.2;
  double blur_prob = 0.1;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double solarize_prob = 0.0;
  double solarize_threshold = 0.5;

  static AugmentParams online_profile() {
    AugmentParams p;
    p.blur_prob = 0.1;
    p.solarize_prob = 0.0;
    return p;
  }
  static AugmentParams target_profile() {
    AugmentParams p;
    p.blur_prob = 1.0;
    p.solarize_prob = 0.2;
    return p;
  }
  static AugmentParams disabled() {
    AugmentParams p;
    p.hflip_prob = p.color_jitter_prob = p.grayscale_prob = p.blur_prob = p.solarize_prob = 0.0;
    return p;
  }
};

namespace detail {

inline void hflip_image(Tensor& img) {
  int64_t h = img_h(img), w = img_w(img);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, w - 1 - x));
}

inline void adjust_brightness(Tensor& img, double factor) {
  for (double& v : img.data) v = std::clamp(v * factor, 0.0, 1.0);
}

inline void adjust_contrast(Tensor& img, double factor) {
  int64_t h = img_h(img), w = img_w(img);
  double mean = 0.0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) mean += pixel_luma(img, y, x);
  mean /= static_cast<double>(h * w);
  for (double& v : img.data) v = std::clamp((v - mean) * factor + mean, 0.0, 1.0);
}

inline void adjust_saturation(Tensor& img, double factor) {
  int64_t h = img_h(img), w = img_w(img);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double g = pixel_luma(img, y, x);
      for (int64_t c = 0; c < 3; ++c)
        img.at(c, y, x) = std::clamp((img.at(c, y, x) - g) * factor + g, 0.0, 1.0);
    }
}

inline void adjust_hue(Tensor& img, double delta) {
  int64_t h = img_h(img), w = img_w(img);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double hh, ss, vv;
      rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), hh, ss, vv);
      double r, g, b;
      hsv_to_rgb(hh + delta, ss, vv, r, g, b);
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
}

inline void to_grayscale(Tensor& img) {
  int64_t h = img_h(img), w = img_w(img);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double g = pixel_luma(img, y, x);
      for (int64_t c = 0; c < 3; ++c) img.at(c, y, x) = g;
    }
}

inline void solarize(Tensor& img, double threshold) {
  for (double& v : img.data)
    if (v >= threshold) v = 1.0 - v;
}

}  // namespace detail

// Applies, in order: horizontal flip (mirroring the view's boxes and recorded
// in its transform), color jitter, grayscale, Gaussian blur, solarization.
// Pixel values stay in [0,1] and the tensor shape is unchanged.
inline Tensor& augment(View& view, Rng& rng, const AugmentParams& p) {
  if (rng.bernoulli(p.hflip_prob)) {
    detail::hflip_image(view.image);
    double w = view.transform.out_w;
    for (auto& [id, box] : view.boxes) box.x = w - box.x;
    view.transform.hflip = !view.transform.hflip;
  }
  if (rng.bernoulli(p.color_jitter_prob)) {
    detail::adjust_brightness(view.image, rng.uniform(1.0 - p.brightness, 1.0 + p.brightness));
    detail::adjust_contrast(view.image, rng.uniform(1.0 - p.contrast, 1.0 + p.contrast));
    detail::adjust_saturation(view.image, rng.uniform(1.0 - p.saturation, 1.0 + p.saturation));
    detail::adjust_hue(view.image, rng.uniform(-p.hue, p.hue));
  }
  if (rng.bernoulli(p.grayscale_prob)) detail::to_grayscale(view.image);
  if (rng.bernoulli(p.blur_prob))
    view.image = gaussian_blur(view.image, rng.uniform(p.blur_sigma_min, p.blur_sigma_max));
  if (rng.bernoulli(p.solarize_prob)) detail::solarize(view.image, p.solarize_threshold);
  clamp01(view.image);
  return view.image;
}

}  // namespace soco
