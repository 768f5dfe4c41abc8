#pragma once

#include <map>
#include <string>

#include "snapflow/tensor.hpp"

namespace snapflow {

// Named tensor collection for network weights and normalization state.
// std::map keeps iteration order stable, which fixes the optimizer's update
// order and the checkpoint layout.
class ParamStore {
 public:
  struct Entry {
    Tensor tensor;
    bool trainable = true;
  };

  Tensor& add(const std::string& name, Tensor t, bool trainable = true) {
    check(entries_.find(name) == entries_.end(), "duplicate parameter name: ", name);
    t.set_requires_grad(trainable);
    auto [it, ok] = entries_.emplace(name, Entry{std::move(t), trainable});
    (void)ok;
    return it->second.tensor;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = entries_.find(name);
    check(it != entries_.end(), "unknown parameter: ", name);
    return it->second.tensor;
  }
  const Tensor& get(const std::string& name) const {
    auto it = entries_.find(name);
    check(it != entries_.end(), "unknown parameter: ", name);
    return it->second.tensor;
  }
  bool trainable(const std::string& name) const {
    auto it = entries_.find(name);
    check(it != entries_.end(), "unknown parameter: ", name);
    return it->second.trainable;
  }

  size_t size() const { return entries_.size(); }
  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& [k, e] : entries_) n += e.tensor.numel();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void clear() { entries_.clear(); }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace snapflow
