#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "soco/errors.hpp"
#include "soco/image.hpp"
#include "soco/tensor.hpp"

namespace soco {

// Dense per-pixel segment ids, contiguous 0..n_segments-1, each segment
// 4-connected.
struct LabelMap {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<int> labels;  // row-major, height*width
  int n_segments = 0;

  int at(int64_t y, int64_t x) const { return labels[static_cast<size_t>(y * width + x)]; }
};

namespace detail {

struct Dsu {
  std::vector<int> parent;
  std::vector<int> size;
  explicit Dsu(int n) : parent(n), size(n, 1) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  // Returns the surviving root. Smaller index wins ties so results are stable.
  int join(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (size[a] < size[b] || (size[a] == size[b] && b < a)) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
    return a;
  }
};

struct PixelEdge {
  float weight;
  int32_t a;
  int32_t b;
};

}  // namespace detail

// Graph-based segmentation: merge components greedily over edges sorted by
// weight, where a merge is allowed while the edge weight does not exceed the
// internal difference of either side plus its k/|C| slack, then force
// components below min_size to merge. Edge weights are Euclidean RGB distances
// between 8-connected neighbors of the sigma-smoothed image, measured on the
// 0-255 scale that the stock parameter defaults (k=500) are calibrated for.
// Segments are finally split into 4-connected components and tiny remnants of
// the split are absorbed into their most similar neighbor, so every output
// segment is 4-connected and has at least min_size pixels.
inline LabelMap felzenszwalb_segment(const Tensor& image, double k, double sigma,
                                     int64_t min_size) {
  check_image(image);
  check_input(k > 0.0, "felzenszwalb_segment: k must be positive");
  check_input(sigma >= 0.0, "felzenszwalb_segment: sigma must be non-negative");
  check_input(min_size >= 1, "felzenszwalb_segment: min_size must be >= 1");

  const int64_t h = img_h(image), w = img_w(image);
  const int n = static_cast<int>(h * w);
  Tensor smooth = gaussian_blur(image, sigma);

  auto weight_between = [&](int64_t y0, int64_t x0, int64_t y1, int64_t x1) {
    double s = 0.0;
    for (int64_t c = 0; c < 3; ++c) {
      double d = smooth.at(c, y0, x0) - smooth.at(c, y1, x1);
      s += d * d;
    }
    return static_cast<float>(255.0 * std::sqrt(s));
  };

  std::vector<detail::PixelEdge> edges;
  edges.reserve(static_cast<size_t>(4 * n));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      int32_t p = static_cast<int32_t>(y * w + x);
      if (x + 1 < w)
        edges.push_back({weight_between(y, x, y, x + 1), p, static_cast<int32_t>(p + 1)});
      if (y + 1 < h)
        edges.push_back({weight_between(y, x, y + 1, x), p, static_cast<int32_t>(p + w)});
      if (x + 1 < w && y + 1 < h)
        edges.push_back({weight_between(y, x, y + 1, x + 1), p, static_cast<int32_t>(p + w + 1)});
      if (x > 0 && y + 1 < h)
        edges.push_back({weight_between(y, x, y + 1, x - 1), p, static_cast<int32_t>(p + w - 1)});
    }
  // Ties broken by lexicographic pixel index so the result is deterministic.
  std::sort(edges.begin(), edges.end(), [](const detail::PixelEdge& e1, const detail::PixelEdge& e2) {
    if (e1.weight != e2.weight) return e1.weight < e2.weight;
    if (e1.a != e2.a) return e1.a < e2.a;
    return e1.b < e2.b;
  });

  detail::Dsu dsu(n);
  std::vector<float> internal(static_cast<size_t>(n), 0.0f);
  for (const auto& e : edges) {
    int ra = dsu.find(e.a), rb = dsu.find(e.b);
    if (ra == rb) continue;
    float ta = internal[static_cast<size_t>(ra)] + static_cast<float>(k / dsu.size[ra]);
    float tb = internal[static_cast<size_t>(rb)] + static_cast<float>(k / dsu.size[rb]);
    if (e.weight <= std::min(ta, tb)) {
      int r = dsu.join(ra, rb);
      internal[static_cast<size_t>(r)] = e.weight;  // edges ascend, so this is the max
    }
  }
  for (const auto& e : edges) {
    int ra = dsu.find(e.a), rb = dsu.find(e.b);
    if (ra != rb && (dsu.size[ra] < min_size || dsu.size[rb] < min_size)) dsu.join(ra, rb);
  }

  // 4-connected decomposition of the merged components, labels in first-pixel
  // row-major order.
  LabelMap lm;
  lm.width = w;
  lm.height = h;
  lm.labels.assign(static_cast<size_t>(n), -1);
  int next = 0;
  std::vector<int32_t> stack;
  for (int32_t p = 0; p < n; ++p) {
    if (lm.labels[static_cast<size_t>(p)] >= 0) continue;
    int root = dsu.find(p);
    int label = next++;
    stack.assign(1, p);
    lm.labels[static_cast<size_t>(p)] = label;
    while (!stack.empty()) {
      int32_t q = stack.back();
      stack.pop_back();
      int64_t y = q / w, x = q % w;
      const int64_t ny[4] = {y - 1, y + 1, y, y};
      const int64_t nx[4] = {x, x, x - 1, x + 1};
      for (int d = 0; d < 4; ++d) {
        if (ny[d] < 0 || ny[d] >= h || nx[d] < 0 || nx[d] >= w) continue;
        int32_t r = static_cast<int32_t>(ny[d] * w + nx[d]);
        if (lm.labels[static_cast<size_t>(r)] < 0 && dsu.find(r) == root) {
          lm.labels[static_cast<size_t>(r)] = label;
          stack.push_back(r);
        }
      }
    }
  }
  lm.n_segments = next;

  // The split can leave fragments below min_size; absorb each into the
  // 4-adjacent segment with the closest mean color (ties to the smaller id).
  while (lm.n_segments > 1) {
    std::vector<int64_t> count(static_cast<size_t>(lm.n_segments), 0);
    std::vector<double> mean(static_cast<size_t>(lm.n_segments) * 3, 0.0);
    for (int32_t p = 0; p < n; ++p) {
      int l = lm.labels[static_cast<size_t>(p)];
      count[static_cast<size_t>(l)]++;
      int64_t y = p / w, x = p % w;
      for (int64_t c = 0; c < 3; ++c) mean[static_cast<size_t>(l) * 3 + static_cast<size_t>(c)] += smooth.at(c, y, x);
    }
    int victim = -1;
    for (int l = 0; l < lm.n_segments; ++l)
      if (count[static_cast<size_t>(l)] < min_size) {
        victim = l;
        break;
      }
    if (victim < 0) break;
    for (int l = 0; l < lm.n_segments; ++l)
      for (int64_t c = 0; c < 3; ++c)
        mean[static_cast<size_t>(l) * 3 + static_cast<size_t>(c)] /= static_cast<double>(count[static_cast<size_t>(l)]);

    int best = -1;
    double best_dist = 0.0;
    for (int32_t p = 0; p < n; ++p) {
      if (lm.labels[static_cast<size_t>(p)] != victim) continue;
      int64_t y = p / w, x = p % w;
      const int64_t ny[4] = {y - 1, y + 1, y, y};
      const int64_t nx[4] = {x, x, x - 1, x + 1};
      for (int d = 0; d < 4; ++d) {
        if (ny[d] < 0 || ny[d] >= h || nx[d] < 0 || nx[d] >= w) continue;
        int l = lm.labels[static_cast<size_t>(ny[d] * w + nx[d])];
        if (l == victim) continue;
        double dist = 0.0;
        for (int64_t c = 0; c < 3; ++c) {
          double dd = mean[static_cast<size_t>(victim) * 3 + static_cast<size_t>(c)] -
                      mean[static_cast<size_t>(l) * 3 + static_cast<size_t>(c)];
          dist += dd * dd;
        }
        if (best < 0 || dist < best_dist || (dist == best_dist && l < best)) {
          best = l;
          best_dist = dist;
        }
      }
    }
    if (best < 0) break;  // isolated victim cannot happen on a connected grid
    int keep = std::min(victim, best), drop = std::max(victim, best);
    for (auto& l : lm.labels) {
      if (l == drop) l = keep;
      if (l > drop) l--;
    }
    lm.n_segments--;
  }
  return lm;
}

}  // namespace soco
