#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "soco/augment.hpp"
#include "soco/autodiff.hpp"
#include "soco/checkpoint.hpp"
#include "soco/errors.hpp"
#include "soco/model.hpp"
#include "soco/optim.hpp"
#include "soco/params.hpp"
#include "soco/proposals.hpp"
#include "soco/rng.hpp"
#include "soco/tensor.hpp"
#include "soco/views.hpp"

namespace soco {

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

// Negative scaled cosine between an embedding and its positive:
// -2 <v, v_pos> / (|v| |v_pos|). Invariant to positive rescaling of either
// argument; range [-2, 2] per pair.
inline double pair_loss(const Tensor& v, const Tensor& v_pos) {
  double nv = l2_norm(v), np = l2_norm(v_pos);
  if (nv <= 0.0 || np <= 0.0) throw NumericError("pair_loss: zero-norm embedding");
  return -2.0 * dot(v, v_pos) / (nv * np);
}

// Eq-level loss for one image: arithmetic mean over its proposals.
inline double image_loss(const std::vector<double>& per_proposal_losses) {
  check_input(!per_proposal_losses.empty(), "image_loss: need at least one proposal");
  double s = 0.0;
  for (double v : per_proposal_losses) s += v;
  return s / static_cast<double>(per_proposal_losses.size());
}

// ---------------------------------------------------------------------------
// Training setup
// ---------------------------------------------------------------------------

struct TrainImage {
  std::string id;
  Tensor image;                 // (3,H,W) in [0,1]
  std::vector<BBox> proposals;  // already filtered, original-image coordinates
};

struct TrainSettings {
  ModelConfig model;
  ViewConfig views;
  AugmentParams aug_online = AugmentParams::online_profile();  // V1 pipeline
  AugmentParams aug_target = AugmentParams::target_profile();  // V2..V4 pipeline
  int64_t steps = 200;
  int64_t batch_size = 8;
  int k_proposals = 4;
  double base_lr = 1.0;
  LarsConfig lars;
  double tau0 = 0.99;
  int64_t warmup_epochs = 10;
  int64_t checkpoint_every = 100;
  uint64_t seed = 1;
  std::string out_dir;      // metrics + checkpoints live here; empty disables files
  std::string resume_from;  // checkpoint path; empty starts fresh
};

struct TrainState {
  ParamTree online;
  ParamTree target;
  LarsState lars;
  int64_t step = 0;
};

struct StepMetrics {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double tau = 0.0;
  double mean_pos_cosine = 0.0;
  double embed_std = 0.0;
  int64_t level_histogram[4] = {0, 0, 0, 0};
  // Diagnostics not serialized to the metrics log.
  double min_proposal_loss = 0.0;
  double max_proposal_loss = 0.0;
  int64_t n_rois = 0;
};

inline std::string metrics_json_line(const StepMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\"step\": %lld, \"loss\": %.17g, \"lr\": %.17g, \"tau\": %.17g, "
                "\"mean_pos_cosine\": %.17g, \"embed_std\": %.17g, "
                "\"level_histogram\": [%lld, %lld, %lld, %lld]}",
                static_cast<long long>(m.step), m.loss, m.lr, m.tau, m.mean_pos_cosine,
                m.embed_std, static_cast<long long>(m.level_histogram[0]),
                static_cast<long long>(m.level_histogram[1]),
                static_cast<long long>(m.level_histogram[2]),
                static_cast<long long>(m.level_histogram[3]));
  return std::string(buf);
}

inline TrainState init_train_state(const SoCoNet& net, uint64_t seed) {
  TrainState st;
  st.online = net.init_params(seed);
  st.target = SoCoNet::make_target(st.online);
  st.lars = LarsState::init(st.online);
  st.step = 0;
  return st;
}

// ---------------------------------------------------------------------------
// One training step: view construction + symmetrized loss graph
// ---------------------------------------------------------------------------

namespace detail {
// Stream tags; arbitrary distinct constants.
inline constexpr uint64_t kStreamBatch = 101;
inline constexpr uint64_t kStreamProposals = 102;
inline constexpr uint64_t kStreamViews = 103;
inline constexpr uint64_t kStreamAugment = 104;
}  // namespace detail

struct StepComputation {
  std::unique_ptr<Graph> graph;  // online graph; backward(loss) drives the update
  Value loss;                    // L + L~, scalar
  StepMetrics metrics;
};

// Builds per-view batches for the given images and evaluates the symmetrized
// objective: L feeds V1 to the online network and the other views to the
// target network; L~ swaps the roles. Every per-view randomness comes from a
// stream derived from (seed, step, slot), so any step is reproducible in
// isolation.
inline StepComputation symmetrized_step_loss(const SoCoNet& net, ParamTree& online,
                                             ParamTree& target,
                                             const std::vector<const TrainImage*>& batch,
                                             const TrainSettings& s, int64_t step) {
  check_input(!batch.empty(), "symmetrized_step_loss: empty batch");
  const int64_t n = static_cast<int64_t>(batch.size());

  // Per-image view sets.
  std::vector<ViewSet> sets;
  sets.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const TrainImage& im = *batch[static_cast<size_t>(i)];
    Rng rng_prop(derive_seed(s.seed, {detail::kStreamProposals, static_cast<uint64_t>(step),
                                      static_cast<uint64_t>(i)}));
    std::vector<BBox> sampled =
        sample_proposals(im.proposals, s.k_proposals, rng_prop,
                         static_cast<double>(img_w(im.image)), static_cast<double>(img_h(im.image)));
    Rng rng_view(derive_seed(s.seed, {detail::kStreamViews, static_cast<uint64_t>(step),
                                      static_cast<uint64_t>(i)}));
    ViewSet vs = build_views(im.image, sampled, s.views, rng_view);
    for (size_t j = 0; j < vs.views.size(); ++j) {
      Rng rng_aug(derive_seed(s.seed, {detail::kStreamAugment, static_cast<uint64_t>(step),
                                       static_cast<uint64_t>(i), static_cast<uint64_t>(j)}));
      augment(vs.views[j], rng_aug, j == 0 ? s.aug_online : s.aug_target);
    }
    sets.push_back(std::move(vs));
  }
  const size_t n_views = sets[0].views.size();

  // Batched image tensor and roi list per view index; rois are ordered by
  // (image, surviving proposal id), identically across views.
  std::vector<Tensor> view_images;
  std::vector<std::vector<RoiSpec>> view_rois(n_views);
  for (size_t j = 0; j < n_views; ++j) {
    int64_t sz = static_cast<int64_t>(sets[0].views[j].transform.out_h);
    Tensor imgs({n, 3, sz, sz});
    for (int64_t i = 0; i < n; ++i) {
      const View& v = sets[static_cast<size_t>(i)].views[j];
      check_input(static_cast<int64_t>(v.transform.out_h) == sz,
                  "symmetrized_step_loss: mixed view resolutions in batch");
      std::copy(v.image.data.begin(), v.image.data.end(),
                imgs.data.begin() + i * v.image.numel());
      for (const auto& [id, box] : v.boxes)
        view_rois[j].push_back(RoiSpec{i, box});
    }
    view_images.push_back(std::move(imgs));
  }
  const int64_t m = static_cast<int64_t>(view_rois[0].size());
  for (size_t j = 1; j < n_views; ++j)
    check_input(static_cast<int64_t>(view_rois[j].size()) == m,
                "symmetrized_step_loss: views disagree on surviving proposals");

  // Eq. 6 weighting: mean over each image's proposals, then mean over images.
  Tensor weights({m});
  std::vector<int64_t> roi_image(static_cast<size_t>(m));
  {
    int64_t r = 0;
    for (int64_t i = 0; i < n; ++i) {
      int64_t mi = static_cast<int64_t>(sets[static_cast<size_t>(i)].common_ids.size());
      for (int64_t k = 0; k < mi; ++k, ++r) {
        weights[r] = 1.0 / (static_cast<double>(n) * static_cast<double>(mi));
        roi_image[static_cast<size_t>(r)] = i;
      }
    }
    check_input(r == m, "symmetrized_step_loss: roi bookkeeping mismatch");
  }

  StepComputation out;
  out.graph = std::make_unique<Graph>(true);
  Graph& g = *out.graph;
  Graph tg(false);  // target evaluations record no gradients

  NetMode online_mode{true, true, true};
  NetMode target_mode{false, true, false};

  // Online embeddings of every view (V1 for L, the others for L~), then
  // target embeddings of the same views with roles swapped.
  std::vector<Value> v_online(n_views), v_target(n_views);
  for (size_t j = 0; j < n_views; ++j)
    v_online[j] = l2_normalize(
        net.embed_rois(g, online, g.input(view_images[j]), view_rois[j], online_mode), 1);
  for (size_t j = 0; j < n_views; ++j) {
    Value e = net.embed_rois(tg, target, tg.input(view_images[j]), view_rois[j], target_mode);
    v_target[j] = l2_normalize(g.input(e.val()), 1);  // enters the online graph as a constant
  }

  Value wv = g.input(weights);
  Value loss;
  std::vector<double> per_roi_loss(static_cast<size_t>(m), 0.0);
  double cos_sum = 0.0;
  int64_t cos_count = 0;
  for (size_t j = 1; j < n_views; ++j) {
    Value cos_l = row_dot(v_online[0], v_target[j]);   // L: online V1 vs target Vj
    Value cos_lt = row_dot(v_online[j], v_target[0]);  // L~: online Vj vs target V1
    for (int64_t r = 0; r < m; ++r) {
      per_roi_loss[static_cast<size_t>(r)] += -2.0 * cos_l.val()[r];
      cos_sum += cos_l.val()[r] + cos_lt.val()[r];
    }
    cos_count += 2 * m;
    Value term = add(scale(sum_all(mul(cos_l, wv)), -2.0), scale(sum_all(mul(cos_lt, wv)), -2.0));
    loss = loss.valid() ? add(loss, term) : term;
  }
  out.loss = loss;

  StepMetrics& mt = out.metrics;
  mt.step = step;
  mt.loss = g.value(loss)[0];
  mt.mean_pos_cosine = cos_count > 0 ? cos_sum / static_cast<double>(cos_count) : 0.0;
  mt.n_rois = m;
  mt.min_proposal_loss = *std::min_element(per_roi_loss.begin(), per_roi_loss.end());
  mt.max_proposal_loss = *std::max_element(per_roi_loss.begin(), per_roi_loss.end());

  // Spread of the normalized online V1 embeddings: mean over dimensions of
  // the per-dimension std across rois. Collapse drives this to zero.
  {
    const Tensor& v = g.value(v_online[0]);
    int64_t d = v.shape[1];
    double acc = 0.0;
    for (int64_t jdim = 0; jdim < d; ++jdim) {
      double mean = 0.0, sq = 0.0;
      for (int64_t r = 0; r < m; ++r) mean += v.at(r, jdim);
      mean /= static_cast<double>(m);
      for (int64_t r = 0; r < m; ++r) {
        double dd = v.at(r, jdim) - mean;
        sq += dd * dd;
      }
      acc += std::sqrt(sq / static_cast<double>(m));
    }
    mt.embed_std = acc / static_cast<double>(d);
  }
  if (!s.model.c4_mode)
    for (size_t j = 0; j < n_views; ++j)
      for (const RoiSpec& r : view_rois[j])
        mt.level_histogram[assign_level(r.box) - 2]++;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const TrainState& st) {
  std::vector<std::pair<std::string, const Tensor*>> entries;
  Tensor step_t = Tensor::scalar(static_cast<double>(st.step));
  entries.emplace_back("meta/step", &step_t);
  for (const ParamEntry& e : st.online.entries())
    entries.emplace_back("online/" + e.name, &e.value);
  for (const ParamEntry& e : st.target.entries())
    entries.emplace_back("target/" + e.name, &e.value);
  for (int i = 0; i < st.online.size(); ++i)
    if (st.online.at(i).trainable)
      entries.emplace_back("opt/m/" + st.online.at(i).name,
                           &st.lars.slots[static_cast<size_t>(i)]);
  write_tensors(path, entries);
}

inline TrainState load_checkpoint(const std::string& path, const SoCoNet& net) {
  std::map<std::string, Tensor> data = read_tensors(path);
  TrainState st = init_train_state(net, 0);
  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = data.find(name);
    if (it == data.end()) throw FormatError("checkpoint: missing entry " + name);
    if (it->second.shape != dst.shape)
      throw FormatError("checkpoint: shape mismatch for " + name);
    dst = std::move(it->second);
    data.erase(it);
  };
  Tensor step_t = Tensor::scalar(0.0);
  take("meta/step", step_t);
  st.step = static_cast<int64_t>(step_t[0]);
  for (ParamEntry& e : st.online.entries()) take("online/" + e.name, e.value);
  for (ParamEntry& e : st.target.entries()) take("target/" + e.name, e.value);
  for (int i = 0; i < st.online.size(); ++i)
    if (st.online.at(i).trainable)
      take("opt/m/" + st.online.at(i).name, st.lars.slots[static_cast<size_t>(i)]);
  if (!data.empty())
    throw FormatError("checkpoint: unexpected entry " + data.begin()->first);
  return st;
}

// All pretrained weights except projection and prediction: the online
// backbone, FPN (when present) and head subtrees, with names as in the tree.
inline void export_backbone(const std::string& checkpoint_path, const std::string& out_path) {
  std::map<std::string, Tensor> data = read_tensors(checkpoint_path);
  std::vector<std::pair<std::string, const Tensor*>> entries;
  for (const auto& [name, t] : data) {
    if (name.rfind("online/", 0) != 0) continue;
    std::string bare = name.substr(7);
    if (bare.rfind("backbone.", 0) == 0 || bare.rfind("fpn.", 0) == 0 ||
        bare.rfind("head.", 0) == 0)
      entries.emplace_back(bare, &t);
  }
  if (entries.empty()) throw FormatError("export: no backbone tensors in " + checkpoint_path);
  write_tensors(out_path, entries);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// Runs the full schedule: sample a batch, build and augment views, evaluate
// the symmetrized loss, backprop, LARS step on the online tree, EMA update of
// the target with the scheduled momentum. Metrics are appended per step; a
// checkpoint lands every checkpoint_every steps, at the end, and (best
// effort) on numeric abort.
inline std::vector<StepMetrics> train_loop(
    const std::vector<TrainImage>& dataset, const TrainSettings& s,
    const std::function<void(const StepMetrics&)>& on_step = {}) {
  check_input(!dataset.empty(), "train_loop: empty dataset");
  check_input(s.steps >= 1 && s.batch_size >= 1, "train_loop: bad schedule");
  SoCoNet net(s.model);

  TrainState st = s.resume_from.empty() ? init_train_state(net, s.seed)
                                        : load_checkpoint(s.resume_from, net);
  int64_t steps_per_epoch =
      (static_cast<int64_t>(dataset.size()) + s.batch_size - 1) / s.batch_size;
  int64_t warmup_steps = s.warmup_epochs * steps_per_epoch;
  warmup_steps = std::min(warmup_steps, s.steps);

  std::ofstream metrics_file;
  std::string ckpt_dir = s.out_dir;
  if (!ckpt_dir.empty()) {
    metrics_file.open(ckpt_dir + "/metrics.jsonl",
                      st.step == 0 ? std::ios::trunc : std::ios::app);
    if (!metrics_file) throw FormatError("train_loop: cannot open metrics file in " + ckpt_dir);
  }
  auto checkpoint_path = [&](int64_t step) {
    return ckpt_dir + "/ckpt_" + std::to_string(step) + ".soco";
  };

  std::vector<StepMetrics> history;
  for (int64_t step = st.step; step < s.steps; ++step) {
    Rng rng_batch(derive_seed(s.seed, {detail::kStreamBatch, static_cast<uint64_t>(step)}));
    std::vector<const TrainImage*> batch;
    for (int64_t b = 0; b < s.batch_size; ++b)
      batch.push_back(&dataset[static_cast<size_t>(
          rng_batch.uniform_int(static_cast<int64_t>(dataset.size())))]);

    double lr = lr_schedule(step, s.steps, warmup_steps, s.base_lr, s.batch_size);
    double tau = momentum_schedule(step, s.steps, s.tau0);
    try {
      StepComputation sc = symmetrized_step_loss(net, st.online, st.target, batch, s, step);
      sc.graph->backward(sc.loss);
      std::map<int, Tensor> grads = sc.graph->param_grads();
      lars_step(st.online, grads, st.lars, lr, s.lars);
      ema_update(st.online, st.target, tau);
      st.step = step + 1;

      sc.metrics.lr = lr;
      sc.metrics.tau = tau;
      history.push_back(sc.metrics);
      if (metrics_file) metrics_file << metrics_json_line(sc.metrics) << "\n" << std::flush;
      if (on_step) on_step(sc.metrics);
    } catch (const NumericError&) {
      if (!ckpt_dir.empty()) save_checkpoint(checkpoint_path(st.step), st);
      throw;
    }
    if (!ckpt_dir.empty() &&
        (st.step % s.checkpoint_every == 0 || st.step == s.steps))
      save_checkpoint(checkpoint_path(st.step), st);
  }
  return history;
}

}  // namespace soco
