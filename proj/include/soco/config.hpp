#pragma once

#include <json.hpp>

#include <algorithm>
#include <initializer_list>
#include <string>
#include <vector>

#include "soco/augment.hpp"
#include "soco/errors.hpp"
#include "soco/model.hpp"
#include "soco/proposals.hpp"
#include "soco/selective_search.hpp"
#include "soco/synth.hpp"
#include "soco/train.hpp"
#include "soco/views.hpp"

namespace soco {

// Full run configuration. Every field has a default, so an empty JSON object
// yields the smoke configuration; unknown keys anywhere are a hard error.
struct RunConfig {
  uint64_t seed = 1;

  std::string data_dir = "data";
  std::string proposal_cache = "data/proposals.jsonl";
  std::string out_dir = "runs/smoke";

  int64_t n_images = 64;
  SceneConfig scene;

  SelectiveSearchParams search;

  int k_proposals = 4;
  JitterParams jitter;

  std::string arch = "fpn";  // "fpn" or "c4"
  ViewConfig views;
  ModelConfig model;

  // Shared photometric parameters plus the per-branch blur/solarize split.
  AugmentParams aug_base;
  double blur_prob_online = 0.1;
  double blur_prob_target = 1.0;
  double solarize_prob_online = 0.0;
  double solarize_prob_target = 0.2;

  // Desk-scale smoke schedule. The paper-scale recipe (base_lr 1.0, eta
  // 0.001, 10 warmup epochs) undertrains badly at batch 8 under the linear
  // lr scaling rule; these values keep the 200-step run in the working
  // regime. All overridable.
  int64_t steps = 200;
  int64_t batch_size = 8;
  double base_lr = 64.0;
  LarsConfig lars = {0.002, 0.9, 1e-5};
  double tau0 = 0.99;
  int64_t warmup_epochs = 2;
  int64_t checkpoint_every = 100;
  std::string resume_from;
};

namespace cfgdetail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& section,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidInputError("config: section '" + section + "' must be an object");
  for (const auto& item : j.items()) {
    bool known = std::any_of(allowed.begin(), allowed.end(),
                             [&](const char* k) { return item.key() == k; });
    if (!known)
      throw InvalidInputError("config: unknown key '" +
                              (section.empty() ? item.key() : section + "." + item.key()) + "'");
  }
}

template <typename T>
void get(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidInputError("config: bad value for '" + section + "." + std::string(key) + "'");
  }
}

}  // namespace cfgdetail

inline RunConfig parse_config(const nlohmann::json& j) {
  using cfgdetail::check_keys;
  using cfgdetail::get;
  RunConfig c;
  check_keys(j, "", {"seed", "paths", "data", "selective_search", "proposals", "views", "augment",
                     "model", "train"});
  get(j, "seed", c.seed, "");
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    check_keys(p, "paths", {"data_dir", "proposal_cache", "out_dir"});
    get(p, "data_dir", c.data_dir, "paths");
    get(p, "proposal_cache", c.proposal_cache, "paths");
    get(p, "out_dir", c.out_dir, "paths");
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"n_images", "image_size", "shapes_min", "shapes_max", "iou_cap",
                           "allow_ellipse", "gradient_fill", "rel_scale_min", "rel_scale_max",
                           "aspect_min", "aspect_max", "noise"});
    get(d, "n_images", c.n_images, "data");
    get(d, "image_size", c.scene.image_size, "data");
    get(d, "shapes_min", c.scene.shapes_min, "data");
    get(d, "shapes_max", c.scene.shapes_max, "data");
    get(d, "iou_cap", c.scene.iou_cap, "data");
    get(d, "allow_ellipse", c.scene.allow_ellipse, "data");
    get(d, "gradient_fill", c.scene.gradient_fill, "data");
    get(d, "rel_scale_min", c.scene.rel_scale_min, "data");
    get(d, "rel_scale_max", c.scene.rel_scale_max, "data");
    get(d, "aspect_min", c.scene.aspect_min, "data");
    get(d, "aspect_max", c.scene.aspect_max, "data");
    get(d, "noise", c.scene.noise, "data");
  }
  if (j.contains("selective_search")) {
    const auto& ss = j.at("selective_search");
    check_keys(ss, "selective_search", {"scale", "sigma", "min_size"});
    get(ss, "scale", c.search.scale, "selective_search");
    get(ss, "sigma", c.search.sigma, "selective_search");
    get(ss, "min_size", c.search.min_size, "selective_search");
  }
  if (j.contains("proposals")) {
    const auto& p = j.at("proposals");
    check_keys(p, "proposals",
               {"k", "jitter_enabled", "jitter_prob", "jitter_ratio", "jitter_shared_r"});
    get(p, "k", c.k_proposals, "proposals");
    get(p, "jitter_enabled", c.jitter.enabled, "proposals");
    get(p, "jitter_prob", c.jitter.prob, "proposals");
    get(p, "jitter_ratio", c.jitter.ratio, "proposals");
    get(p, "jitter_shared_r", c.jitter.shared_r, "proposals");
  }
  if (j.contains("views")) {
    const auto& v = j.at("views");
    check_keys(v, "views",
               {"v1", "v3", "v4", "enable_v4", "crop_area_min", "crop_area_max",
                "crop_aspect_min", "crop_aspect_max", "crop_retries", "clip_partial"});
    get(v, "v1", c.views.v1_size, "views");
    get(v, "v3", c.views.v3_size, "views");
    get(v, "v4", c.views.v4_size, "views");
    get(v, "enable_v4", c.views.enable_v4, "views");
    get(v, "crop_area_min", c.views.crop_area_min, "views");
    get(v, "crop_area_max", c.views.crop_area_max, "views");
    get(v, "crop_aspect_min", c.views.crop_aspect_min, "views");
    get(v, "crop_aspect_max", c.views.crop_aspect_max, "views");
    get(v, "crop_retries", c.views.crop_retries, "views");
    get(v, "clip_partial", c.views.clip_partial, "views");
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    check_keys(a, "augment",
               {"hflip_prob", "color_jitter_prob", "brightness", "contrast", "saturation", "hue",
                "grayscale_prob", "blur_sigma_min", "blur_sigma_max", "blur_prob_online",
                "blur_prob_target", "solarize_threshold", "solarize_prob_online",
                "solarize_prob_target"});
    get(a, "hflip_prob", c.aug_base.hflip_prob, "augment");
    get(a, "color_jitter_prob", c.aug_base.color_jitter_prob, "augment");
    get(a, "brightness", c.aug_base.brightness, "augment");
    get(a, "contrast", c.aug_base.contrast, "augment");
    get(a, "saturation", c.aug_base.saturation, "augment");
    get(a, "hue", c.aug_base.hue, "augment");
    get(a, "grayscale_prob", c.aug_base.grayscale_prob, "augment");
    get(a, "blur_sigma_min", c.aug_base.blur_sigma_min, "augment");
    get(a, "blur_sigma_max", c.aug_base.blur_sigma_max, "augment");
    get(a, "solarize_threshold", c.aug_base.solarize_threshold, "augment");
    get(a, "blur_prob_online", c.blur_prob_online, "augment");
    get(a, "blur_prob_target", c.blur_prob_target, "augment");
    get(a, "solarize_prob_online", c.solarize_prob_online, "augment");
    get(a, "solarize_prob_target", c.solarize_prob_target, "augment");
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "model",
               {"arch", "widths", "blocks_per_stage", "fpn_dim", "head_width", "proj_hidden",
                "proj_dim", "roi_out", "c4_roi_out", "sampling_ratio", "bn_momentum"});
    get(m, "arch", c.arch, "model");
    get(m, "widths", c.model.widths, "model");
    get(m, "blocks_per_stage", c.model.blocks_per_stage, "model");
    get(m, "fpn_dim", c.model.fpn_dim, "model");
    get(m, "head_width", c.model.head_width, "model");
    get(m, "proj_hidden", c.model.proj_hidden, "model");
    get(m, "proj_dim", c.model.proj_dim, "model");
    get(m, "roi_out", c.model.roi_out, "model");
    get(m, "c4_roi_out", c.model.c4_roi_out, "model");
    get(m, "sampling_ratio", c.model.sampling_ratio, "model");
    get(m, "bn_momentum", c.model.bn_momentum, "model");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"steps", "batch_size", "base_lr", "weight_decay", "trust_coeff", "lars_momentum",
                "tau0", "warmup_epochs", "checkpoint_every", "resume_from"});
    get(t, "steps", c.steps, "train");
    get(t, "batch_size", c.batch_size, "train");
    get(t, "base_lr", c.base_lr, "train");
    get(t, "weight_decay", c.lars.weight_decay, "train");
    get(t, "trust_coeff", c.lars.trust_coeff, "train");
    get(t, "lars_momentum", c.lars.momentum, "train");
    get(t, "tau0", c.tau0, "train");
    get(t, "warmup_epochs", c.warmup_epochs, "train");
    get(t, "checkpoint_every", c.checkpoint_every, "train");
    get(t, "resume_from", c.resume_from, "train");
  }
  if (c.arch != "fpn" && c.arch != "c4")
    throw InvalidInputError("config: model.arch must be 'fpn' or 'c4'");
  if (c.scene.shapes_min > c.scene.shapes_max || c.scene.shapes_min < 1)
    throw InvalidInputError("config: bad data.shapes_min/shapes_max");
  c.model.c4_mode = c.arch == "c4";
  c.views.enable_v3 = !c.model.c4_mode;  // the C4 variant discards V3
  c.views.jitter = c.jitter;
  return c;
}

inline nlohmann::json serialize_config(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["paths"] = {{"data_dir", c.data_dir},
                {"proposal_cache", c.proposal_cache},
                {"out_dir", c.out_dir}};
  j["data"] = {{"n_images", c.n_images},
               {"image_size", c.scene.image_size},
               {"shapes_min", c.scene.shapes_min},
               {"shapes_max", c.scene.shapes_max},
               {"iou_cap", c.scene.iou_cap},
               {"allow_ellipse", c.scene.allow_ellipse},
               {"gradient_fill", c.scene.gradient_fill},
               {"rel_scale_min", c.scene.rel_scale_min},
               {"rel_scale_max", c.scene.rel_scale_max},
               {"aspect_min", c.scene.aspect_min},
               {"aspect_max", c.scene.aspect_max},
               {"noise", c.scene.noise}};
  j["selective_search"] = {{"scale", c.search.scale},
                           {"sigma", c.search.sigma},
                           {"min_size", c.search.min_size}};
  j["proposals"] = {{"k", c.k_proposals},
                    {"jitter_enabled", c.jitter.enabled},
                    {"jitter_prob", c.jitter.prob},
                    {"jitter_ratio", c.jitter.ratio},
                    {"jitter_shared_r", c.jitter.shared_r}};
  j["views"] = {{"v1", c.views.v1_size},
                {"v3", c.views.v3_size},
                {"v4", c.views.v4_size},
                {"enable_v4", c.views.enable_v4},
                {"crop_area_min", c.views.crop_area_min},
                {"crop_area_max", c.views.crop_area_max},
                {"crop_aspect_min", c.views.crop_aspect_min},
                {"crop_aspect_max", c.views.crop_aspect_max},
                {"crop_retries", c.views.crop_retries},
                {"clip_partial", c.views.clip_partial}};
  j["augment"] = {{"hflip_prob", c.aug_base.hflip_prob},
                  {"color_jitter_prob", c.aug_base.color_jitter_prob},
                  {"brightness", c.aug_base.brightness},
                  {"contrast", c.aug_base.contrast},
                  {"saturation", c.aug_base.saturation},
                  {"hue", c.aug_base.hue},
                  {"grayscale_prob", c.aug_base.grayscale_prob},
                  {"blur_sigma_min", c.aug_base.blur_sigma_min},
                  {"blur_sigma_max", c.aug_base.blur_sigma_max},
                  {"blur_prob_online", c.blur_prob_online},
                  {"blur_prob_target", c.blur_prob_target},
                  {"solarize_threshold", c.aug_base.solarize_threshold},
                  {"solarize_prob_online", c.solarize_prob_online},
                  {"solarize_prob_target", c.solarize_prob_target}};
  j["model"] = {{"arch", c.arch},
                {"widths", c.model.widths},
                {"blocks_per_stage", c.model.blocks_per_stage},
                {"fpn_dim", c.model.fpn_dim},
                {"head_width", c.model.head_width},
                {"proj_hidden", c.model.proj_hidden},
                {"proj_dim", c.model.proj_dim},
                {"roi_out", c.model.roi_out},
                {"c4_roi_out", c.model.c4_roi_out},
                {"sampling_ratio", c.model.sampling_ratio},
                {"bn_momentum", c.model.bn_momentum}};
  j["train"] = {{"steps", c.steps},
                {"batch_size", c.batch_size},
                {"base_lr", c.base_lr},
                {"weight_decay", c.lars.weight_decay},
                {"trust_coeff", c.lars.trust_coeff},
                {"lars_momentum", c.lars.momentum},
                {"tau0", c.tau0},
                {"warmup_epochs", c.warmup_epochs},
                {"checkpoint_every", c.checkpoint_every},
                {"resume_from", c.resume_from}};
  return j;
}

inline AugmentParams online_augment(const RunConfig& c) {
  AugmentParams p = c.aug_base;
  p.blur_prob = c.blur_prob_online;
  p.solarize_prob = c.solarize_prob_online;
  return p;
}

inline AugmentParams target_augment(const RunConfig& c) {
  AugmentParams p = c.aug_base;
  p.blur_prob = c.blur_prob_target;
  p.solarize_prob = c.solarize_prob_target;
  return p;
}

inline TrainSettings make_train_settings(const RunConfig& c) {
  TrainSettings s;
  s.model = c.model;
  s.views = c.views;
  s.aug_online = online_augment(c);
  s.aug_target = target_augment(c);
  s.steps = c.steps;
  s.batch_size = c.batch_size;
  s.k_proposals = c.k_proposals;
  s.base_lr = c.base_lr;
  s.lars = c.lars;
  s.tau0 = c.tau0;
  s.warmup_epochs = c.warmup_epochs;
  s.checkpoint_every = c.checkpoint_every;
  s.seed = c.seed;
  s.out_dir = c.out_dir;
  s.resume_from = c.resume_from;
  return s;
}

}  // namespace soco
