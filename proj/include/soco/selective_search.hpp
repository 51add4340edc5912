#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "soco/errors.hpp"
#include "soco/geometry.hpp"
#include "soco/image.hpp"
#include "soco/segmentation.hpp"
#include "soco/tensor.hpp"

namespace soco {

inline constexpr int kColorBins = 25;                          // per channel
inline constexpr int kColorHistDim = kColorBins * 3;           // 75
inline constexpr int kTextureOrientations = 8;
inline constexpr int kTextureBins = 10;
inline constexpr int kTextureHistDim = kTextureOrientations * kTextureBins * 3;  // 240

// A segment with the descriptors the pairwise similarities need. Histograms
// are L1-normalized over their full length; merged regions carry the
// pixel-count-weighted average of their children's histograms.
struct Region {
  int id = -1;
  int64_t pixel_count = 0;
  BBox bbox;
  std::vector<double> color_hist;    // kColorHistDim
  std::vector<double> texture_hist;  // kTextureHistDim
};

struct RegionGraph {
  std::vector<Region> regions;
  std::set<std::pair<int, int>> adjacency;  // (i,j) with i<j, 4-connected borders
};

struct SelectiveSearchParams {
  double scale = 500.0;
  double sigma = 0.9;
  int64_t min_size = 10;
};

namespace detail {

// Gaussian-derivative responses (sigma = 1) of one channel, x and y.
inline void gaussian_derivatives(const Tensor& image, int64_t c, std::vector<double>& gx,
                                 std::vector<double>& gy) {
  const double sigma = 1.0;
  std::vector<double> g = gaussian_kernel_1d(sigma);
  int radius = static_cast<int>(g.size() / 2);
  std::vector<double> dg(g.size());
  for (int i = -radius; i <= radius; ++i)
    dg[static_cast<size_t>(i + radius)] = -(static_cast<double>(i) / (sigma * sigma)) *
                                          g[static_cast<size_t>(i + radius)];
  int64_t h = img_h(image), w = img_w(image);
  std::vector<double> tmp(static_cast<size_t>(h * w));
  gx.assign(static_cast<size_t>(h * w), 0.0);
  gy.assign(static_cast<size_t>(h * w), 0.0);

  auto conv_rows = [&](const std::vector<double>& kern, bool from_image,
                       const std::vector<double>& src, std::vector<double>& dst) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int64_t xx = std::clamp<int64_t>(x + i, 0, w - 1);
          double v = from_image ? image.at(c, y, xx) : src[static_cast<size_t>(y * w + xx)];
          s += kern[static_cast<size_t>(i + radius)] * v;
        }
        dst[static_cast<size_t>(y * w + x)] = s;
      }
  };
  auto conv_cols = [&](const std::vector<double>& kern, const std::vector<double>& src,
                       std::vector<double>& dst) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int64_t yy = std::clamp<int64_t>(y + i, 0, h - 1);
          s += kern[static_cast<size_t>(i + radius)] * src[static_cast<size_t>(yy * w + x)];
        }
        dst[static_cast<size_t>(y * w + x)] = s;
      }
  };

  std::vector<double> none;
  conv_rows(dg, true, none, tmp);  // d/dx then smooth in y
  conv_cols(g, tmp, gx);
  conv_rows(g, true, none, tmp);   // smooth in x then d/dy
  conv_cols(dg, tmp, gy);
}

inline void l1_normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  if (s > 0.0)
    for (double& x : v) x /= s;
}

}  // namespace detail

// One Region per label plus the 4-connected adjacency between segments.
inline RegionGraph build_regions(const Tensor& image, const LabelMap& lm) {
  check_image(image);
  check_input(lm.width == img_w(image) && lm.height == img_h(image),
              "build_regions: label map does not match image dimensions");
  const int64_t h = lm.height, w = lm.width;
  const int n = lm.n_segments;

  RegionGraph rg;
  rg.regions.assign(static_cast<size_t>(n), Region{});
  std::vector<int64_t> min_x(static_cast<size_t>(n), w), max_x(static_cast<size_t>(n), -1);
  std::vector<int64_t> min_y(static_cast<size_t>(n), h), max_y(static_cast<size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    rg.regions[static_cast<size_t>(i)].id = i;
    rg.regions[static_cast<size_t>(i)].color_hist.assign(kColorHistDim, 0.0);
    rg.regions[static_cast<size_t>(i)].texture_hist.assign(kTextureHistDim, 0.0);
  }

  std::vector<std::vector<double>> gx(3), gy(3);
  for (int64_t c = 0; c < 3; ++c) detail::gaussian_derivatives(image, c, gx[static_cast<size_t>(c)], gy[static_cast<size_t>(c)]);

  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      int l = lm.at(y, x);
      Region& r = rg.regions[static_cast<size_t>(l)];
      r.pixel_count++;
      min_x[static_cast<size_t>(l)] = std::min(min_x[static_cast<size_t>(l)], x);
      max_x[static_cast<size_t>(l)] = std::max(max_x[static_cast<size_t>(l)], x);
      min_y[static_cast<size_t>(l)] = std::min(min_y[static_cast<size_t>(l)], y);
      max_y[static_cast<size_t>(l)] = std::max(max_y[static_cast<size_t>(l)], y);
      for (int64_t c = 0; c < 3; ++c) {
        double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        int bin = std::min(kColorBins - 1, static_cast<int>(v * kColorBins));
        r.color_hist[static_cast<size_t>(c) * kColorBins + static_cast<size_t>(bin)] += 1.0;
        // Directional derivative at 8 orientations over a half turn, binned
        // uniformly on [-1, 1].
        double dx = gx[static_cast<size_t>(c)][static_cast<size_t>(y * w + x)];
        double dy = gy[static_cast<size_t>(c)][static_cast<size_t>(y * w + x)];
        for (int o = 0; o < kTextureOrientations; ++o) {
          double theta = M_PI * o / kTextureOrientations;
          double resp = std::clamp(std::cos(theta) * dx + std::sin(theta) * dy, -1.0, 1.0);
          int tb = std::min(kTextureBins - 1,
                            static_cast<int>((resp + 1.0) * 0.5 * kTextureBins));
          size_t idx = (static_cast<size_t>(c) * kTextureOrientations + static_cast<size_t>(o)) *
                           kTextureBins + static_cast<size_t>(tb);
          r.texture_hist[idx] += 1.0;
        }
      }
      if (x + 1 < w && lm.at(y, x + 1) != l) {
        int m = lm.at(y, x + 1);
        rg.adjacency.insert({std::min(l, m), std::max(l, m)});
      }
      if (y + 1 < h && lm.at(y + 1, x) != l) {
        int m = lm.at(y + 1, x);
        rg.adjacency.insert({std::min(l, m), std::max(l, m)});
      }
    }

  for (int i = 0; i < n; ++i) {
    Region& r = rg.regions[static_cast<size_t>(i)];
    // Pixel (ix, iy) spans [ix, ix+1) x [iy, iy+1) in continuous coordinates.
    r.bbox = BBox::from_corners(static_cast<double>(min_x[static_cast<size_t>(i)]),
                                static_cast<double>(min_y[static_cast<size_t>(i)]),
                                static_cast<double>(max_x[static_cast<size_t>(i)] + 1),
                                static_cast<double>(max_y[static_cast<size_t>(i)] + 1));
    detail::l1_normalize(r.color_hist);
    detail::l1_normalize(r.texture_hist);
  }
  return rg;
}

inline double histogram_intersection(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::min(a[i], b[i]);
  return s;
}

inline BBox bbox_union(const BBox& a, const BBox& b) {
  return BBox::from_corners(std::min(a.x0(), b.x0()), std::min(a.y0(), b.y0()),
                            std::max(a.x1(), b.x1()), std::max(a.y1(), b.y1()));
}

// Sum of color, texture, size and fill similarities, each in [0, 1].
inline double region_similarity(const Region& a, const Region& b, double image_area) {
  check_input(image_area > 0.0, "region_similarity: zero image area");
  double s_color = histogram_intersection(a.color_hist, b.color_hist);
  double s_texture = histogram_intersection(a.texture_hist, b.texture_hist);
  double size_a = static_cast<double>(a.pixel_count), size_b = static_cast<double>(b.pixel_count);
  double s_size = 1.0 - (size_a + size_b) / image_area;
  double s_fill =
      1.0 - (bbox_union(a.bbox, b.bbox).area() - size_a - size_b) / image_area;
  s_fill = std::clamp(s_fill, 0.0, 1.0);
  return s_color + s_texture + s_size + s_fill;
}

inline Region merge_regions(const Region& a, const Region& b, int new_id) {
  Region m;
  m.id = new_id;
  m.pixel_count = a.pixel_count + b.pixel_count;
  m.bbox = bbox_union(a.bbox, b.bbox);
  double wa = static_cast<double>(a.pixel_count) / static_cast<double>(m.pixel_count);
  double wb = static_cast<double>(b.pixel_count) / static_cast<double>(m.pixel_count);
  m.color_hist.resize(a.color_hist.size());
  for (size_t i = 0; i < a.color_hist.size(); ++i)
    m.color_hist[i] = wa * a.color_hist[i] + wb * b.color_hist[i];
  m.texture_hist.resize(a.texture_hist.size());
  for (size_t i = 0; i < a.texture_hist.size(); ++i)
    m.texture_hist[i] = wa * a.texture_hist[i] + wb * b.texture_hist[i];
  return m;
}

struct GroupTrace {
  std::vector<BBox> proposals;                  // every region ever created, de-duplicated
  std::vector<std::pair<int, int>> merges;      // (id_a, id_b) in merge order
};

// Greedy agglomeration: repeatedly merge the most similar adjacent pair (ties
// to the smaller (id_a, id_b)) until a single region covers the image. The
// proposal list is the bbox of every region ever created, initial regions
// first, then merged regions in creation order, exact duplicates removed.
inline GroupTrace hierarchical_group_trace(const std::vector<Region>& regions,
                                           const std::set<std::pair<int, int>>& adjacency,
                                           double image_area) {
  check_input(!regions.empty(), "hierarchical_group: no regions");
  std::map<int, Region> active;
  for (const Region& r : regions) active.emplace(r.id, r);
  int next_id = 0;
  for (const Region& r : regions) next_id = std::max(next_id, r.id + 1);

  std::map<std::pair<int, int>, double> sim;
  std::map<int, std::set<int>> nbrs;
  for (const auto& [i, j] : adjacency) {
    sim[{i, j}] = region_similarity(active.at(i), active.at(j), image_area);
    nbrs[i].insert(j);
    nbrs[j].insert(i);
  }

  GroupTrace out;
  auto push_box = [&](const BBox& b) {
    for (const BBox& p : out.proposals)
      if (p == b) return;
    out.proposals.push_back(b);
  };
  for (const Region& r : regions) push_box(r.bbox);

  while (active.size() > 1) {
    // Ordered map iteration + strict '>' keeps the smallest key among ties.
    std::pair<int, int> best{-1, -1};
    double best_sim = -1.0;
    for (const auto& [key, s] : sim)
      if (s > best_sim) {
        best_sim = s;
        best = key;
      }
    if (best.first < 0) break;  // disconnected graph; cannot happen for images

    auto [ia, ib] = best;
    Region merged = merge_regions(active.at(ia), active.at(ib), next_id++);
    out.merges.push_back(best);
    push_box(merged.bbox);

    std::set<int> merged_nbrs;
    for (int t : nbrs[ia])
      if (t != ib) merged_nbrs.insert(t);
    for (int t : nbrs[ib])
      if (t != ia) merged_nbrs.insert(t);
    for (int t : nbrs[ia]) {
      sim.erase({std::min(ia, t), std::max(ia, t)});
      nbrs[t].erase(ia);
    }
    for (int t : nbrs[ib]) {
      sim.erase({std::min(ib, t), std::max(ib, t)});
      nbrs[t].erase(ib);
    }
    nbrs.erase(ia);
    nbrs.erase(ib);
    active.erase(ia);
    active.erase(ib);

    active.emplace(merged.id, merged);
    for (int t : merged_nbrs) {
      sim[{std::min(merged.id, t), std::max(merged.id, t)}] =
          region_similarity(merged, active.at(t), image_area);
      nbrs[merged.id].insert(t);
      nbrs[t].insert(merged.id);
    }
  }
  return out;
}

inline std::vector<BBox> hierarchical_group(const std::vector<Region>& regions,
                                            const std::set<std::pair<int, int>>& adjacency,
                                            double image_area) {
  return hierarchical_group_trace(regions, adjacency, image_area).proposals;
}

// Full proposal generation: segment, describe, group. Output boxes are
// center-format in original image coordinates; pure function of its inputs.
inline std::vector<BBox> selective_search(const Tensor& image, const SelectiveSearchParams& params) {
  check_image(image);
  LabelMap lm = felzenszwalb_segment(image, params.scale, params.sigma, params.min_size);
  RegionGraph rg = build_regions(image, lm);
  double image_area = static_cast<double>(img_w(image) * img_h(image));
  return hierarchical_group(rg.regions, rg.adjacency, image_area);
}

}  // namespace soco
