#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "soco/autodiff.hpp"
#include "soco/errors.hpp"
#include "soco/geometry.hpp"
#include "soco/params.hpp"
#include "soco/rng.hpp"
#include "soco/tensor.hpp"

namespace soco {

struct ModelConfig {
  std::vector<int64_t> widths = {16, 32, 64, 128};  // stage channel counts C2..C5
  int64_t blocks_per_stage = 1;
  int64_t fpn_dim = 32;
  int64_t head_width = 256;
  int64_t proj_hidden = 512;
  int64_t proj_dim = 64;
  int64_t roi_out = 7;       // RoIAlign output grid on pyramid levels
  int64_t c4_roi_out = 14;   // RoIAlign output grid on C4 in the C4 variant
  int64_t sampling_ratio = 2;
  bool c4_mode = false;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

// Routes a box to a pyramid level by its pixel area, measured in the
// coordinates of the view it came from: up to 48^2 -> P2, up to 96^2 -> P3,
// up to 192^2 -> P4, everything larger -> P5 (boxes jittered past the 224
// cap land on P5 automatically).
inline int assign_level(const BBox& box) {
  double a = box.area();
  if (a <= 48.0 * 48.0) return 2;
  if (a <= 96.0 * 96.0) return 3;
  if (a <= 192.0 * 192.0) return 4;
  return 5;
}

// How a forward pass should behave. Target evaluations run with online=false
// on a non-recording Graph; update_running is set only for online-branch
// training forwards so batchnorm buffers change exactly once per use.
struct NetMode {
  bool online = true;
  bool train = true;
  bool update_running = false;
};

struct BackboneFeatures {
  Value c2, c3, c4, c5;  // strides 4, 8, 16, 32
};

struct PyramidFeatures {
  Value p2, p3, p4, p5;  // strides 4, 8, 16, 32, all at fpn_dim channels
};

// The SoCo network: residual backbone with the {4,8,16,32} stride contract,
// FPN, RoI head, projector and (online-only) predictor; or the C4 variant
// where RoIAlign reads C4 directly and the fifth residual stage is the head.
class SoCoNet {
 public:
  explicit SoCoNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    check_input(cfg_.widths.size() == 4, "SoCoNet: need 4 stage widths");
  }

  const ModelConfig& config() const { return cfg_; }

  // Deterministic He-style initialization; the predictor is part of the
  // online tree only (make_target strips it).
  ParamTree init_params(uint64_t seed) const {
    ParamTree t;
    Rng rng(derive_seed(seed, {0x50a0c0}));
    init_conv(t, rng, "backbone.stem.conv.w", cfg_.widths[0], 3, 3, false);
    init_bn(t, "backbone.stem.bn", cfg_.widths[0]);
    int64_t cin = cfg_.widths[0];
    for (int s = 2; s <= (cfg_.c4_mode ? 4 : 5); ++s) {
      int64_t cout = cfg_.widths[static_cast<size_t>(s - 2)];
      for (int64_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        init_block(t, rng, stage_prefix(s, b), b == 0 ? cin : cout, cout,
                   (s > 2 && b == 0) ? 2 : 1);
      }
      cin = cout;
    }
    if (cfg_.c4_mode) {
      // Fifth residual stage acts as the RoI head.
      for (int64_t b = 0; b < cfg_.blocks_per_stage; ++b)
        init_block(t, rng, "head.s5.b" + std::to_string(b), b == 0 ? cfg_.widths[2] : cfg_.widths[3],
                   cfg_.widths[3], b == 0 ? 2 : 1);
    } else {
      for (int s = 2; s <= 5; ++s) {
        std::string lp = "fpn.lateral" + std::to_string(s);
        init_conv(t, rng, lp + ".w", cfg_.fpn_dim, cfg_.widths[static_cast<size_t>(s - 2)], 1, true);
        std::string sp = "fpn.smooth" + std::to_string(s);
        init_conv(t, rng, sp + ".w", cfg_.fpn_dim, cfg_.fpn_dim, 3, true);
      }
      int64_t head_in = cfg_.fpn_dim * cfg_.roi_out * cfg_.roi_out;
      init_linear(t, rng, "head.fc1", cfg_.head_width, head_in);
      init_linear(t, rng, "head.fc2", cfg_.head_width, cfg_.head_width);
    }
    int64_t h_dim = cfg_.c4_mode ? cfg_.widths[3] : cfg_.head_width;
    init_mlp(t, rng, "proj", h_dim);
    init_mlp(t, rng, "pred", cfg_.proj_dim);
    return t;
  }

  static ParamTree make_target(const ParamTree& online) {
    ParamTree t;
    for (const ParamEntry& e : online.entries())
      if (e.name.rfind("pred.", 0) != 0) t.add(e.name, e.value, e.trainable, e.no_decay);
    return t;
  }

  // Image-level encoder producing {C2..C5}; H and W must be divisible by 32
  // so every stage halves exactly.
  BackboneFeatures backbone_forward(Graph& g, ParamTree& t, Value images,
                                    const NetMode& mode) const {
    check_input(!cfg_.c4_mode, "backbone_forward: full pyramid requires FPN configuration");
    const Tensor& x = images.val();
    check_input(x.rank() == 4 && x.shape[1] == 3, "backbone_forward: need (N,3,H,W)");
    check_input(x.shape[2] % 32 == 0 && x.shape[3] % 32 == 0,
                "backbone_forward: H and W must be divisible by 32, got " + x.shape_str());
    Value y = stem(g, t, images, mode);
    BackboneFeatures f;
    f.c2 = stage(g, t, y, 2, mode);
    f.c3 = stage(g, t, f.c2, 3, mode);
    f.c4 = stage(g, t, f.c3, 4, mode);
    f.c5 = stage(g, t, f.c4, 5, mode);
    return f;
  }

  // Lateral 1x1 projections, top-down nearest-2x upsampling with addition,
  // then 3x3 smoothing. P5 is the smoothed lateral of C5.
  PyramidFeatures fpn_forward(Graph& g, ParamTree& t, const BackboneFeatures& f,
                              const NetMode& mode) const {
    (void)mode;
    check_input(!cfg_.c4_mode, "fpn_forward: disabled in C4 configuration");
    Value m5 = lateral(g, t, f.c5, 5);
    Value m4 = add(lateral(g, t, f.c4, 4), upsample_nearest2x(m5));
    Value m3 = add(lateral(g, t, f.c3, 3), upsample_nearest2x(m4));
    Value m2 = add(lateral(g, t, f.c2, 2), upsample_nearest2x(m3));
    PyramidFeatures p;
    p.p2 = smooth(g, t, m2, 2);
    p.p3 = smooth(g, t, m3, 3);
    p.p4 = smooth(g, t, m4, 4);
    p.p5 = smooth(g, t, m5, 5);
    return p;
  }

  // Full object-level path for a batch of views: images (N,3,S,S) and one
  // RoiSpec per proposal occurrence. Returns (M, proj_dim) embeddings in roi
  // order. Online mode appends the predictor; target mode stops at the
  // projector.
  Value embed_rois(Graph& g, ParamTree& t, Value images, const std::vector<RoiSpec>& rois,
                   const NetMode& mode) const {
    check_input(!rois.empty(), "embed_rois: no rois");
    Value h = cfg_.c4_mode ? head_features_c4(g, t, images, rois, mode)
                           : head_features_fpn(g, t, images, rois, mode);
    Value z = mlp(g, t, "proj", h, mode);
    if (mode.online) z = mlp(g, t, "pred", z, mode);
    return z;
  }

  // Embedding of a single box in a single view; v = q(g(fH(RoIAlign(fI(V),b))))
  // online, v' = g(fH(...)) target.
  Value object_embed(Graph& g, ParamTree& t, const Tensor& view_image, const BBox& box,
                     const NetMode& mode) const {
    check_input(view_image.rank() == 3 && view_image.shape[0] == 3,
                "object_embed: need (3,H,W) view");
    Tensor batch({1, 3, view_image.shape[1], view_image.shape[2]});
    batch.data = view_image.data;
    return embed_rois(g, t, g.input(std::move(batch)), {RoiSpec{0, box}}, mode);
  }

 private:
  static std::string stage_prefix(int s, int64_t b) {
    return "backbone.s" + std::to_string(s) + ".b" + std::to_string(b);
  }

  void init_conv(ParamTree& t, Rng& rng, const std::string& name, int64_t cout, int64_t cin,
                 int64_t k, bool bias) const {
    Tensor w({cout, cin, k, k});
    double std = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    for (double& v : w.data) v = rng.normal(0.0, std);
    t.add(name, std::move(w));
    if (bias) {
      std::string bname = name.substr(0, name.size() - 2) + ".b";
      t.add(bname, Tensor({cout}), true, true);
    }
  }

  void init_bn(ParamTree& t, const std::string& prefix, int64_t c) const {
    t.add(prefix + ".gamma", Tensor::full({c}, 1.0), true, true);
    t.add(prefix + ".beta", Tensor({c}), true, true);
    t.add(prefix + ".rmean", Tensor({c}), false, true);
    t.add(prefix + ".rvar", Tensor::full({c}, 1.0), false, true);
  }

  void init_block(ParamTree& t, Rng& rng, const std::string& prefix, int64_t cin, int64_t cout,
                  int64_t stride) const {
    init_conv(t, rng, prefix + ".conv1.w", cout, cin, 3, false);
    init_bn(t, prefix + ".bn1", cout);
    init_conv(t, rng, prefix + ".conv2.w", cout, cout, 3, false);
    init_bn(t, prefix + ".bn2", cout);
    if (stride != 1 || cin != cout) {
      init_conv(t, rng, prefix + ".skip.w", cout, cin, 1, false);
      init_bn(t, prefix + ".skipbn", cout);
    }
  }

  void init_linear(ParamTree& t, Rng& rng, const std::string& prefix, int64_t dout,
                   int64_t din) const {
    Tensor w({dout, din});
    double std = std::sqrt(2.0 / static_cast<double>(din));
    for (double& v : w.data) v = rng.normal(0.0, std);
    t.add(prefix + ".w", std::move(w));
    t.add(prefix + ".b", Tensor({dout}), true, true);
  }

  void init_mlp(ParamTree& t, Rng& rng, const std::string& prefix, int64_t din) const {
    init_linear(t, rng, prefix + ".fc1", cfg_.proj_hidden, din);
    init_bn(t, prefix + ".bn", cfg_.proj_hidden);
    init_linear(t, rng, prefix + ".fc2", cfg_.proj_dim, cfg_.proj_hidden);
  }

  Value p(Graph& g, const ParamTree& t, const std::string& name) const {
    int id = t.find(name);
    check_input(id >= 0, "missing parameter " + name);
    return g.param(t.at(id).value, id);
  }

  Value bn(Graph& g, ParamTree& t, const std::string& prefix, Value x, const NetMode& mode) const {
    return batchnorm(x, p(g, t, prefix + ".gamma"), p(g, t, prefix + ".beta"),
                     t.at(prefix + ".rmean").value, t.at(prefix + ".rvar").value, mode.train,
                     mode.update_running, cfg_.bn_momentum, cfg_.bn_eps);
  }

  Value stem(Graph& g, ParamTree& t, Value x, const NetMode& mode) const {
    Value y = conv2d(x, p(g, t, "backbone.stem.conv.w"), Value{}, 2, 1);
    y = relu(bn(g, t, "backbone.stem.bn", y, mode));
    return maxpool2(y);
  }

  Value block(Graph& g, ParamTree& t, const std::string& prefix, Value x, int64_t stride,
              const NetMode& mode) const {
    Value y = conv2d(x, p(g, t, prefix + ".conv1.w"), Value{}, stride, 1);
    y = relu(bn(g, t, prefix + ".bn1", y, mode));
    y = conv2d(y, p(g, t, prefix + ".conv2.w"), Value{}, 1, 1);
    y = bn(g, t, prefix + ".bn2", y, mode);
    Value skip = x;
    if (t.has(prefix + ".skip.w")) {
      skip = conv2d(x, p(g, t, prefix + ".skip.w"), Value{}, stride, 0);
      skip = bn(g, t, prefix + ".skipbn", skip, mode);
    }
    return relu(add(y, skip));
  }

  Value stage(Graph& g, ParamTree& t, Value x, int s, const NetMode& mode) const {
    Value y = x;
    for (int64_t b = 0; b < cfg_.blocks_per_stage; ++b)
      y = block(g, t, stage_prefix(s, b), y, (s > 2 && b == 0) ? 2 : 1, mode);
    return y;
  }

  Value lateral(Graph& g, ParamTree& t, Value c, int s) const {
    std::string prefix = "fpn.lateral" + std::to_string(s);
    return conv2d(c, p(g, t, prefix + ".w"), p(g, t, prefix + ".b"), 1, 0);
  }

  Value smooth(Graph& g, ParamTree& t, Value m, int s) const {
    std::string prefix = "fpn.smooth" + std::to_string(s);
    return conv2d(m, p(g, t, prefix + ".w"), p(g, t, prefix + ".b"), 1, 1);
  }

  Value mlp(Graph& g, ParamTree& t, const std::string& prefix, Value x,
            const NetMode& mode) const {
    Value y = linear(x, p(g, t, prefix + ".fc1.w"), p(g, t, prefix + ".fc1.b"));
    y = relu(bn(g, t, prefix + ".bn", y, mode));
    return linear(y, p(g, t, prefix + ".fc2.w"), p(g, t, prefix + ".fc2.b"));
  }

  // FPN path: scale-aware level routing, per-level RoIAlign, reassembly in
  // proposal order, then the two-layer head.
  Value head_features_fpn(Graph& g, ParamTree& t, Value images, const std::vector<RoiSpec>& rois,
                          const NetMode& mode) const {
    BackboneFeatures f = backbone_forward(g, t, images, mode);
    PyramidFeatures pyr = fpn_forward(g, t, f, mode);
    const Value levels[4] = {pyr.p2, pyr.p3, pyr.p4, pyr.p5};

    std::vector<Value> parts;
    std::vector<std::vector<int64_t>> dest;
    int64_t flat = cfg_.fpn_dim * cfg_.roi_out * cfg_.roi_out;
    for (int lvl = 2; lvl <= 5; ++lvl) {
      std::vector<RoiSpec> lvl_rois;
      std::vector<int64_t> lvl_dest;
      for (size_t i = 0; i < rois.size(); ++i)
        if (assign_level(rois[i].box) == lvl) {
          lvl_rois.push_back(rois[i]);
          lvl_dest.push_back(static_cast<int64_t>(i));
        }
      if (lvl_rois.empty()) continue;
      Value pooled = roi_align(levels[lvl - 2], lvl_rois, std::pow(2.0, lvl), cfg_.roi_out,
                               cfg_.sampling_ratio);
      parts.push_back(reshape(pooled, {static_cast<int64_t>(lvl_rois.size()), flat}));
      dest.push_back(std::move(lvl_dest));
    }
    // A single non-empty level already holds every roi in original order.
    Value h = parts.size() == 1 ? parts[0] : concat_rows_ordered(parts, dest);
    h = relu(linear(h, p(g, t, "head.fc1.w"), p(g, t, "head.fc1.b")));
    h = relu(linear(h, p(g, t, "head.fc2.w"), p(g, t, "head.fc2.b")));
    return h;
  }

  // C4 path: the pyramid is bypassed; RoIAlign reads C4 at stride 16 for
  // every box regardless of area, and the fifth residual stage plus global
  // average pooling produces the object-level feature.
  Value head_features_c4(Graph& g, ParamTree& t, Value images, const std::vector<RoiSpec>& rois,
                         const NetMode& mode) const {
    const Tensor& x = images.val();
    check_input(x.rank() == 4 && x.shape[1] == 3, "embed_rois: need (N,3,H,W)");
    check_input(x.shape[2] % 16 == 0 && x.shape[3] % 16 == 0,
                "embed_rois: C4 path needs H, W divisible by 16");
    Value y = stem(g, t, images, mode);
    y = stage(g, t, y, 2, mode);
    y = stage(g, t, y, 3, mode);
    y = stage(g, t, y, 4, mode);  // stride 16
    Value pooled = roi_align(y, rois, 16.0, cfg_.c4_roi_out, cfg_.sampling_ratio);
    Value h = pooled;
    for (int64_t b = 0; b < cfg_.blocks_per_stage; ++b)
      h = block(g, t, "head.s5.b" + std::to_string(b), h, b == 0 ? 2 : 1, mode);
    return global_avg_pool(h);
  }

  ModelConfig cfg_;
};

}  // namespace soco
