#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "soco/autodiff.hpp"
#include "soco/rng.hpp"
#include "soco/tensor.hpp"

namespace soco {

// Builds a scalar loss from leaves created inside the given Graph. The same
// closure is re-evaluated with perturbed tensors for finite differences, so it
// must be a pure function of its inputs.
using ScalarFn = std::function<Value(Graph&, const std::vector<Tensor>&)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_err() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_err);
    return m;
  }
  bool pass(double tol) const { return max_err() <= tol; }
};

// Central finite-difference check of d(loss)/d(input i) for every checked
// input. Error metric per coordinate: |fd - analytic| / max(1, |fd|,
// |analytic|). For tensors above coord_cap coordinates, a deterministic
// random subset of coordinates is probed.
inline GradCheckEntry gradcheck_one(const ScalarFn& fn, std::vector<Tensor> inputs,
                                    size_t which, const std::string& name, double epsilon = 1e-5,
                                    int64_t coord_cap = 16, uint64_t seed = 17) {
  Graph g;
  Value loss = fn(g, inputs);
  g.backward(loss);

  // fn created leaves in creation order; leaf i of the graph is inputs[i].
  // We rely on fn registering its inputs as params with ids 0..n-1.
  std::map<int, Tensor> analytic = g.param_grads();
  check_input(analytic.count(static_cast<int>(which)) == 1,
              "gradcheck: input " + name + " was not registered as a param");
  const Tensor& an = analytic.at(static_cast<int>(which));

  Tensor& target = inputs[which];
  int64_t n = target.numel();
  std::vector<int64_t> coords(static_cast<size_t>(n));
  std::iota(coords.begin(), coords.end(), 0);
  if (n > coord_cap) {
    Rng rng(derive_seed(seed, {which, static_cast<uint64_t>(n)}));
    for (int64_t i = 0; i < coord_cap; ++i) {
      int64_t j = i + rng.uniform_int(n - i);
      std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
    }
    coords.resize(static_cast<size_t>(coord_cap));
  }

  GradCheckEntry entry{name, 0.0};
  for (int64_t idx : coords) {
    double saved = target[idx];
    target[idx] = saved + epsilon;
    Graph gp;
    double fplus = fn(gp, inputs).val()[0];
    target[idx] = saved - epsilon;
    Graph gm;
    double fminus = fn(gm, inputs).val()[0];
    target[idx] = saved;
    double fd = (fplus - fminus) / (2.0 * epsilon);
    double a = an[idx];
    double err = std::abs(fd - a) / std::max({1.0, std::abs(fd), std::abs(a)});
    entry.max_rel_err = std::max(entry.max_rel_err, err);
  }
  return entry;
}

// Checks the gradient w.r.t. every input tensor of fn.
inline GradCheckReport gradcheck(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                                 const std::vector<std::string>& names, double epsilon = 1e-5,
                                 int64_t coord_cap = 16) {
  GradCheckReport report;
  for (size_t i = 0; i < inputs.size(); ++i)
    report.entries.push_back(gradcheck_one(fn, inputs, i, names[i], epsilon, coord_cap));
  return report;
}

}  // namespace soco
