#pragma once

#include <string>
#include <vector>

#include "soco/autodiff.hpp"
#include "soco/gradcheck.hpp"
#include "soco/model.hpp"
#include "soco/rng.hpp"
#include "soco/tensor.hpp"

namespace soco {

namespace detail {

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for ops with a kink at the origin.
inline Tensor random_tensor_away_from_zero(std::vector<int64_t> shape, Rng& rng,
                                           double margin = 1e-2) {
  Tensor t(std::move(shape));
  for (double& v : t.data) {
    double x = rng.uniform(margin, 1.0);
    v = rng.bernoulli(0.5) ? x : -x;
  }
  return t;
}

inline void append(GradCheckReport& all, const GradCheckReport& part) {
  for (const auto& e : part.entries) all.entries.push_back(e);
}

}  // namespace detail

// A micro configuration small enough for finite differences over every
// parameter tensor.
inline ModelConfig micro_model_config(bool c4) {
  ModelConfig m;
  m.widths = {4, 6, 6, 8};
  m.fpn_dim = 6;
  m.head_width = 16;
  m.proj_hidden = 12;
  m.proj_dim = 6;
  m.roi_out = 3;
  m.c4_roi_out = 4;
  m.sampling_ratio = 2;
  m.c4_mode = c4;
  return m;
}

// End-to-end check: full online path (backbone, FPN or C4 head, RoIAlign,
// projector, predictor) into a fixed-target cosine loss, differentiated
// against every trainable parameter tensor.
inline GradCheckReport gradcheck_micro_model(bool c4, double epsilon = 1e-5,
                                             int64_t coord_cap = 4) {
  ModelConfig mc = micro_model_config(c4);
  SoCoNet net(mc);
  ParamTree base = net.init_params(7);
  Rng rng(99);
  Tensor images = detail::random_tensor({2, 3, 64, 64}, rng, 0.0, 1.0);
  // Two proposals on different images; in FPN mode they land on different
  // pyramid levels (areas 900 and 3000).
  std::vector<RoiSpec> rois = {RoiSpec{0, BBox{24.0, 22.0, 30.0, 30.0}},
                               RoiSpec{1, BBox{32.0, 30.0, 60.0, 50.0}}};
  Tensor target = detail::random_tensor({2, mc.proj_dim}, rng);

  std::vector<Tensor> inputs;
  std::vector<std::string> names;
  std::vector<size_t> trainable_idx;
  for (int i = 0; i < base.size(); ++i) {
    inputs.push_back(base.at(i).value);
    names.push_back(std::string(c4 ? "micro_c4/" : "micro_fpn/") + base.at(i).name);
    if (base.at(i).trainable) trainable_idx.push_back(static_cast<size_t>(i));
  }

  ScalarFn fn = [&, net, images, rois, target](Graph& g, const std::vector<Tensor>& in) {
    ParamTree t = base;
    for (int i = 0; i < t.size(); ++i) t.at(i).value = in[static_cast<size_t>(i)];
    NetMode mode{true, true, false};  // running stats untouched: pure closure
    Value v = net.embed_rois(g, t, g.input(images), rois, mode);
    Value cos = row_dot(l2_normalize(v, 1), l2_normalize(g.input(target), 1));
    return scale(mean_all(cos), -2.0);
  };

  GradCheckReport report;
  for (size_t i : trainable_idx)
    report.entries.push_back(gradcheck_one(fn, inputs, i, names[i], epsilon, coord_cap));
  return report;
}

// Per-op finite-difference checks over every differentiable kernel. Each loss
// projects the op output against a fixed random mask so transposition or
// indexing mistakes cannot cancel out in a uniform reduction.
inline GradCheckReport gradcheck_ops(double epsilon = 1e-5, int64_t coord_cap = 16) {
  GradCheckReport all;
  Rng rng(5);

  auto check = [&](const std::string& name, const ScalarFn& fn, std::vector<Tensor> inputs) {
    std::vector<std::string> names;
    for (size_t i = 0; i < inputs.size(); ++i)
      names.push_back(name + "/arg" + std::to_string(i));
    detail::append(all, gradcheck(fn, inputs, names, epsilon, coord_cap));
  };

  auto leaves = [](Graph& g, const std::vector<Tensor>& in) {
    std::vector<Value> vs;
    for (size_t i = 0; i < in.size(); ++i) vs.push_back(g.param(in[i], static_cast<int>(i)));
    return vs;
  };

  Rng mask_rng(23);
  auto mask = [&](std::vector<int64_t> shape) {
    return detail::random_tensor(std::move(shape), mask_rng);
  };

  {
    Tensor m = mask({2, 4, 3, 3});
    check("conv2d",
          [&, m](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            return sum_all(mul(conv2d(v[0], v[1], v[2], 2, 1), g.input(m)));
          },
          {detail::random_tensor({2, 3, 6, 6}, rng), detail::random_tensor({4, 3, 3, 3}, rng),
           detail::random_tensor({4}, rng)});
  }
  {
    Tensor m = mask({3, 4});
    check("linear",
          [&, m](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            return mean_all(mul(linear(v[0], v[1], v[2]), g.input(m)));
          },
          {detail::random_tensor({3, 5}, rng), detail::random_tensor({4, 5}, rng),
           detail::random_tensor({4}, rng)});
  }
  check("relu",
        [&](Graph& g, const std::vector<Tensor>& in) {
          auto v = leaves(g, in);
          return sum_all(relu(v[0]));
        },
        {detail::random_tensor_away_from_zero({4, 7}, rng)});

  check("maxpool2",
        [&](Graph& g, const std::vector<Tensor>& in) {
          auto v = leaves(g, in);
          return mean_all(maxpool2(v[0]));
        },
        {detail::random_tensor({2, 3, 6, 6}, rng)});

  {
    Tensor m = mask({2, 2, 6, 6});
    check("upsample_nearest2x",
          [&, m](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            return mean_all(mul(upsample_nearest2x(v[0]), g.input(m)));
          },
          {detail::random_tensor({2, 2, 3, 3}, rng)});
  }
  {
    Tensor m = mask({2, 3});
    check("global_avg_pool",
          [&, m](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            return mean_all(mul(global_avg_pool(v[0]), g.input(m)));
          },
          {detail::random_tensor({2, 3, 4, 4}, rng)});
  }
  {
    Tensor m = mask({2, 3, 4, 4});
    check("batchnorm_train",
          [&, m](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            Tensor rm({3}), rv = Tensor::full({3}, 1.0);
            return mean_all(mul(batchnorm(v[0], v[1], v[2], rm, rv, true, false), g.input(m)));
          },
          {detail::random_tensor({2, 3, 4, 4}, rng), detail::random_tensor({3}, rng, 0.5, 1.5),
           detail::random_tensor({3}, rng)});

    Tensor rmean = detail::random_tensor({3}, rng, -0.2, 0.2);
    Tensor rvar = detail::random_tensor({3}, rng, 0.5, 1.5);
    check("batchnorm_eval",
          [&, m, rmean, rvar](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            Tensor rm = rmean, rv = rvar;
            return mean_all(mul(batchnorm(v[0], v[1], v[2], rm, rv, false, false), g.input(m)));
          },
          {detail::random_tensor({2, 3, 4, 4}, rng), detail::random_tensor({3}, rng, 0.5, 1.5),
           detail::random_tensor({3}, rng)});
  }
  {
    Tensor m = mask({6, 5});
    check("batchnorm_rank2",
          [&, m](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            Tensor rm({5}), rv = Tensor::full({5}, 1.0);
            return mean_all(mul(batchnorm(v[0], v[1], v[2], rm, rv, true, false), g.input(m)));
          },
          {detail::random_tensor({6, 5}, rng), detail::random_tensor({5}, rng, 0.5, 1.5),
           detail::random_tensor({5}, rng)});
  }
  {
    Tensor m = mask({3, 6});
    check("l2_normalize",
          [&, m](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            return mean_all(mul(l2_normalize(v[0], 1), g.input(m)));
          },
          {detail::random_tensor_away_from_zero({3, 6}, rng, 0.1)});
  }
  check("row_dot",
        [&](Graph& g, const std::vector<Tensor>& in) {
          auto v = leaves(g, in);
          return mean_all(row_dot(v[0], v[1]));
        },
        {detail::random_tensor({4, 5}, rng), detail::random_tensor({4, 5}, rng)});

  check("add_mul_scale",
        [&](Graph& g, const std::vector<Tensor>& in) {
          auto v = leaves(g, in);
          return sum_all(scale(mul(add(v[0], v[1]), sub(v[0], v[1])), 0.5));
        },
        {detail::random_tensor({3, 4}, rng), detail::random_tensor({3, 4}, rng)});

  {
    Tensor m = mask({4, 3});
    check("concat_rows_ordered",
          [&, m](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            Value c = concat_rows_ordered({v[0], v[1]}, {{2, 0}, {1, 3}});
            return mean_all(mul(c, g.input(m)));
          },
          {detail::random_tensor({2, 3}, rng), detail::random_tensor({2, 3}, rng)});
  }
  {
    Tensor m = mask({3, 2, 3, 3});
    check("roi_align",
          [&, m](Graph& g, const std::vector<Tensor>& in) {
            auto v = leaves(g, in);
            std::vector<RoiSpec> rois = {RoiSpec{0, BBox{8.0, 6.0, 10.0, 8.0}},
                                         RoiSpec{1, BBox{10.0, 10.0, 14.0, 12.0}},
                                         RoiSpec{0, BBox{5.5, 4.5, 4.0, 3.0}}};
            Value r = roi_align(v[0], rois, 2.0, 3, 2);
            return mean_all(mul(r, g.input(m)));
          },
          {detail::random_tensor({2, 2, 8, 8}, rng)});
  }
  return all;
}

// The full suite the CLI exposes: every op plus both end-to-end micro models.
inline GradCheckReport gradcheck_suite(double epsilon = 1e-5) {
  GradCheckReport all = gradcheck_ops(epsilon);
  detail::append(all, gradcheck_micro_model(false, epsilon));
  detail::append(all, gradcheck_micro_model(true, epsilon));
  return all;
}

}  // namespace soco
