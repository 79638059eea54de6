#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxslu/rng.hpp"
#include "ctxslu/tensor.hpp"

namespace ctxslu {

enum class ParamInit {
  UniformFanIn,  // uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)], fan_in = last dim
  Zero,
};

// Named parameter tensors with per-parameter gradient accumulators.
// Creation order is the canonical iteration order: initialization draws,
// optimizer state and checkpoint payloads all follow it.
class ParameterStore {
 public:
  explicit ParameterStore(uint64_t seed) : seed_(seed), rng_(seed) {}

  int get_or_create(const std::string& name, const Shape& shape,
                    ParamInit init = ParamInit::UniformFanIn) {
    auto it = index_.find(name);
    if (it != index_.end()) {
      const Entry& e = entries_[static_cast<size_t>(it->second)];
      if (e.value.shape != shape) {
        throw std::invalid_argument("parameter '" + name + "' already exists with shape " +
                                    shape_str(e.value.shape) + ", requested " + shape_str(shape));
      }
      return it->second;
    }
    Entry e;
    e.name = name;
    e.value = Tensor(shape);
    e.grad = Tensor(shape);
    if (init == ParamInit::UniformFanIn) {
      int fan_in = shape.empty() ? 1 : shape.back();
      if (fan_in <= 0) fan_in = 1;
      double bound = std::sqrt(1.0 / fan_in);
      for (double& v : e.value.data) v = rng_.uniform(-bound, bound);
    }
    int idx = static_cast<int>(entries_.size());
    entries_.push_back(std::move(e));
    index_.emplace(name, idx);
    return idx;
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  bool has(const std::string& name) const { return find(name) >= 0; }

  int count() const { return static_cast<int>(entries_.size()); }
  uint64_t seed() const { return seed_; }

  const std::string& name(int idx) const { return entries_[static_cast<size_t>(idx)].name; }
  Tensor& value(int idx) { return entries_[static_cast<size_t>(idx)].value; }
  const Tensor& value(int idx) const { return entries_[static_cast<size_t>(idx)].value; }
  Tensor& grad(int idx) { return entries_[static_cast<size_t>(idx)].grad; }
  const Tensor& grad(int idx) const { return entries_[static_cast<size_t>(idx)].grad; }

  Tensor& value(const std::string& name) { return value(require(name)); }
  const Tensor& value(const std::string& name) const { return value(require(name)); }
  Tensor& grad(const std::string& name) { return grad(require(name)); }
  const Tensor& grad(const std::string& name) const { return grad(require(name)); }

  void zero_grads() {
    for (Entry& e : entries_) {
      std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
    }
  }

  double grad_norm() const {
    double sq = 0.0;
    for (const Entry& e : entries_) {
      for (double g : e.grad.data) sq += g * g;
    }
    return std::sqrt(sq);
  }

  void scale_grads(double factor) {
    for (Entry& e : entries_) {
      for (double& g : e.grad.data) g *= factor;
    }
  }

  bool values_finite() const {
    for (const Entry& e : entries_) {
      if (!e.value.all_finite()) return false;
    }
    return true;
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.value);
    return out;
  }

  void restore(const std::vector<Tensor>& snap) {
    if (snap.size() != entries_.size()) {
      throw std::invalid_argument("snapshot holds " + std::to_string(snap.size()) +
                                  " tensors, store has " + std::to_string(entries_.size()));
    }
    for (size_t i = 0; i < snap.size(); ++i) {
      if (snap[i].shape != entries_[i].value.shape) {
        throw std::invalid_argument("snapshot shape mismatch for '" + entries_[i].name + "'");
      }
      entries_[i].value = snap[i];
    }
  }

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  int require(const std::string& name) const {
    int idx = find(name);
    if (idx < 0) throw std::invalid_argument("unknown parameter '" + name + "'");
    return idx;
  }

  uint64_t seed_;
  RngState rng_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace ctxslu
