#pragma once

#include <map>
#include <string>
#include <vector>

#include "soco/errors.hpp"
#include "soco/tensor.hpp"

namespace soco {

// One named tensor in a parameter tree. Buffers (trainable == false) hold
// batchnorm running statistics: they are checkpointed and EMA-blended like
// weights but never seen by the optimizer. no_decay marks biases and
// normalization parameters, which are excluded from weight decay and from
// LARS trust-ratio adaptation.
struct ParamEntry {
  std::string name;
  Tensor value;
  bool trainable = true;
  bool no_decay = false;
};

class ParamTree {
 public:
  int add(std::string name, Tensor value, bool trainable = true, bool no_decay = false) {
    check_input(index_.count(name) == 0, "ParamTree: duplicate name " + name);
    int id = static_cast<int>(entries_.size());
    index_.emplace(name, id);
    entries_.push_back(ParamEntry{std::move(name), std::move(value), trainable, no_decay});
    return id;
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  ParamEntry& at(int id) { return entries_[static_cast<size_t>(id)]; }
  const ParamEntry& at(int id) const { return entries_[static_cast<size_t>(id)]; }
  ParamEntry& at(const std::string& name) {
    int id = find(name);
    check_input(id >= 0, "ParamTree: missing entry " + name);
    return entries_[static_cast<size_t>(id)];
  }
  const ParamEntry& at(const std::string& name) const {
    int id = find(name);
    check_input(id >= 0, "ParamTree: missing entry " + name);
    return entries_[static_cast<size_t>(id)];
  }

  int size() const { return static_cast<int>(entries_.size()); }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }

  // Same names, shapes and flags in the same order.
  bool structurally_equal(const ParamTree& other) const {
    if (size() != other.size()) return false;
    for (int i = 0; i < size(); ++i) {
      const ParamEntry& a = at(i);
      const ParamEntry& b = other.at(i);
      if (a.name != b.name || a.value.shape != b.value.shape || a.trainable != b.trainable)
        return false;
    }
    return true;
  }

  // Order-independent fingerprint of all values; used to assert that an
  // operation left a tree untouched.
  double checksum() const {
    double s = 0.0;
    for (const ParamEntry& e : entries_) {
      double h = 0.0;
      for (int64_t i = 0; i < e.value.numel(); ++i)
        h += e.value[i] * (1.0 + 1e-4 * static_cast<double>(i % 9973));
      s += h;
    }
    return s;
  }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, int> index_;
};

}  // namespace soco
