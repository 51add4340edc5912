#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "soco/errors.hpp"
#include "soco/tensor.hpp"

namespace soco {

// Images are Tensors of shape (3, H, W) with values in [0, 1].

inline int64_t img_h(const Tensor& img) { return img.shape[1]; }
inline int64_t img_w(const Tensor& img) { return img.shape[2]; }

inline void check_image(const Tensor& img) {
  check_input(img.rank() == 3 && img.shape[0] == 3 && img.shape[1] > 0 && img.shape[2] > 0,
              "expected nonempty (3,H,W) image, got " + img.shape_str());
}

// Luma weights for grayscale conversion.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

inline double pixel_luma(const Tensor& img, int64_t y, int64_t x) {
  return kLumaR * img.at(0, y, x) + kLumaG * img.at(1, y, x) + kLumaB * img.at(2, y, x);
}

// Bilinear sample of one channel at continuous coordinates, where pixel (i,j)
// has its center at (x=j+0.5, y=i+0.5). Coordinates are clamped to the image.
inline double bilinear_sample(const Tensor& img, int64_t c, double y, double x) {
  int64_t h = img.shape[1], w = img.shape[2];
  double ys = y - 0.5, xs = x - 0.5;
  ys = std::clamp(ys, 0.0, static_cast<double>(h - 1));
  xs = std::clamp(xs, 0.0, static_cast<double>(w - 1));
  int64_t y0 = static_cast<int64_t>(std::floor(ys));
  int64_t x0 = static_cast<int64_t>(std::floor(xs));
  int64_t y1 = std::min(y0 + 1, h - 1);
  int64_t x1 = std::min(x0 + 1, w - 1);
  double fy = ys - static_cast<double>(y0);
  double fx = xs - static_cast<double>(x0);
  double top = img.at(c, y0, x0) * (1.0 - fx) + img.at(c, y0, x1) * fx;
  double bot = img.at(c, y1, x0) * (1.0 - fx) + img.at(c, y1, x1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

// Crops the rectangle [cx, cx+cw) x [cy, cy+ch) (continuous source coords) and
// resamples it to (out_h, out_w) by bilinear interpolation at output pixel
// centers. crop == full frame with matching out size is an identity.
inline Tensor crop_resize(const Tensor& img, double cx, double cy, double cw, double ch,
                          int64_t out_h, int64_t out_w) {
  check_image(img);
  check_input(cw > 0.0 && ch > 0.0 && out_h > 0 && out_w > 0, "crop_resize: empty target");
  Tensor out({3, out_h, out_w});
  double sx = cw / static_cast<double>(out_w);
  double sy = ch / static_cast<double>(out_h);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < out_h; ++y) {
      double src_y = cy + (static_cast<double>(y) + 0.5) * sy;
      for (int64_t x = 0; x < out_w; ++x) {
        double src_x = cx + (static_cast<double>(x) + 0.5) * sx;
        out.at(c, y, x) = bilinear_sample(img, c, src_y, src_x);
      }
    }
  return out;
}

inline Tensor resize(const Tensor& img, int64_t out_h, int64_t out_w) {
  return crop_resize(img, 0.0, 0.0, static_cast<double>(img_w(img)),
                     static_cast<double>(img_h(img)), out_h, out_w);
}

inline std::vector<double> gaussian_kernel_1d(double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with clamp-to-edge padding. sigma <= 0 is identity.
inline Tensor gaussian_blur(const Tensor& img, double sigma) {
  check_image(img);
  if (sigma <= 0.0) return img;
  std::vector<double> k = gaussian_kernel_1d(sigma);
  int radius = static_cast<int>(k.size() / 2);
  int64_t h = img_h(img), w = img_w(img);
  Tensor tmp({3, h, w}), out({3, h, w});
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int64_t xx = std::clamp<int64_t>(x + i, 0, w - 1);
          s += k[static_cast<size_t>(i + radius)] * img.at(c, y, xx);
        }
        tmp.at(c, y, x) = s;
      }
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int64_t yy = std::clamp<int64_t>(y + i, 0, h - 1);
          s += k[static_cast<size_t>(i + radius)] * tmp.at(c, yy, x);
        }
        out.at(c, y, x) = s;
      }
  }
  return out;
}

inline void clamp01(Tensor& img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

// RGB <-> HSV on unit-range values; used by the hue jitter.
inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  double d = mx - mn;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r)
    h = std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  double hh = std::fmod(h, 1.0);
  if (hh < 0.0) hh += 1.0;
  hh *= 6.0;
  int i = static_cast<int>(hh) % 6;
  double f = hh - std::floor(hh);
  double p = v * (1.0 - s);
  double q = v * (1.0 - s * f);
  double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace soco
