#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "soco/errors.hpp"
#include "soco/params.hpp"
#include "soco/tensor.hpp"

namespace soco {

struct LarsConfig {
  double trust_coeff = 0.001;  // eta
  double momentum = 0.9;
  double weight_decay = 1e-5;
};

// One momentum buffer per tree entry (zeros for buffers, which never step).
struct LarsState {
  std::vector<Tensor> slots;

  static LarsState init(const ParamTree& params) {
    LarsState s;
    for (const ParamEntry& e : params.entries()) s.slots.push_back(Tensor::zeros(e.value.shape));
    return s;
  }
};

// Layerwise adaptive update. Per trainable tensor:
//   g       <- grad + wd * theta          (wd skipped for no_decay entries)
//   local   <- eta * |theta| / |g|        (1 when either norm is 0, or no_decay)
//   m       <- momentum * m + g * local * lr
//   theta   <- theta - m
// The whole step is validated before anything is written, so a non-finite
// update aborts with the parameters untouched.
inline void lars_step(ParamTree& params, const std::map<int, Tensor>& grads, LarsState& state,
                      double lr, const LarsConfig& cfg) {
  check_input(state.slots.size() == static_cast<size_t>(params.size()),
              "lars_step: state does not match parameter tree");
  struct Pending {
    int id;
    Tensor slot;
  };
  std::vector<Pending> pending;
  for (const auto& [id, grad] : grads) {
    ParamEntry& e = params.at(id);
    if (!e.trainable) continue;
    check_input(grad.shape == e.value.shape, "lars_step: gradient shape mismatch for " + e.name);
    Tensor g = grad;
    if (!e.no_decay && cfg.weight_decay != 0.0)
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += cfg.weight_decay * e.value[i];
    double local = 1.0;
    if (!e.no_decay) {
      double wn = l2_norm(e.value);
      double gn = l2_norm(g);
      if (wn > 0.0 && gn > 0.0) local = cfg.trust_coeff * wn / gn;
    }
    Tensor slot = state.slots[static_cast<size_t>(id)];
    for (int64_t i = 0; i < slot.numel(); ++i) slot[i] = cfg.momentum * slot[i] + g[i] * local * lr;
    if (!slot.all_finite())
      throw NumericError("lars_step: non-finite update for " + e.name);
    pending.push_back(Pending{id, std::move(slot)});
  }
  for (Pending& p : pending) {
    ParamEntry& e = params.at(p.id);
    for (int64_t i = 0; i < e.value.numel(); ++i) e.value[i] -= p.slot[i];
    state.slots[static_cast<size_t>(p.id)] = std::move(p.slot);
  }
}

// xi' = tau * xi + (1 - tau) * theta, elementwise over the target tree. The
// online tree may carry extra entries (the predictor); every target entry
// must exist in the online tree with a matching shape.
inline void ema_update(const ParamTree& online, ParamTree& target, double tau) {
  for (ParamEntry& e : target.entries()) {
    int id = online.find(e.name);
    check_input(id >= 0, "ema_update: online tree is missing " + e.name);
    const Tensor& theta = online.at(id).value;
    check_input(theta.shape == e.value.shape, "ema_update: shape mismatch for " + e.name);
    for (int64_t i = 0; i < e.value.numel(); ++i)
      e.value[i] = tau * e.value[i] + (1.0 - tau) * theta[i];
  }
}

// tau ramps from tau0 at step 0 to exactly 1 at total_steps on a cosine.
inline double momentum_schedule(int64_t step, int64_t total_steps, double tau0) {
  check_input(step >= 0 && step <= total_steps && total_steps > 0, "momentum_schedule: bad step");
  double c = std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps));
  return 1.0 - (1.0 - tau0) * (c + 1.0) / 2.0;
}

// Linear warmup 0 -> peak over warmup_steps, then cosine decay to exactly 0
// at total_steps. peak = base_lr * batch_size / 256.
inline double lr_schedule(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr,
                          int64_t batch_size) {
  check_input(warmup_steps >= 0 && warmup_steps <= total_steps, "lr_schedule: bad warmup");
  check_input(step >= 0 && step <= total_steps, "lr_schedule: bad step");
  double peak = base_lr * static_cast<double>(batch_size) / 256.0;
  if (warmup_steps > 0 && step < warmup_steps)
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  int64_t span = std::max<int64_t>(1, total_steps - warmup_steps);
  double c = std::cos(M_PI * static_cast<double>(step - warmup_steps) / static_cast<double>(span));
  return peak * 0.5 * (1.0 + c);
}

}  // namespace soco
