#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "deground/tensor.hpp"

namespace deground {

/// Named learnable parameters, each with a same-shape gradient accumulator.
/// Iteration is in lexicographic name order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor init) {
    if (entries_.count(name)) throw Error("params: duplicate parameter '" + name + "'");
    std::vector<double> grad(init.size(), 0.0);
    entries_.emplace(name, Entry{std::move(init), std::move(grad)});
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }

  const Tensor& value(const std::string& name) const { return entry(name).value; }

  void set(const std::string& name, Tensor value) {
    auto& e = entry(name);
    if (value.shape() != e.value.shape()) {
      throw Error("params: shape mismatch setting '" + name + "': " +
                  shape_string(value.shape()) + " vs " + shape_string(e.value.shape()));
    }
    e.value = std::move(value);
  }

  /// Rewrites the values of `name` through `fn`, revalidating the result.
  template <typename Fn>
  void update(const std::string& name, Fn&& fn) {
    auto& e = entry(name);
    auto data = e.value.to_vector();
    fn(std::span<double>(data));
    e.value = Tensor(e.value.shape(), std::move(data));
  }

  std::span<double> grad(const std::string& name) { return entry(name).grad; }
  std::span<const double> grad(const std::string& name) const { return entry(name).grad; }

  void zero_grad() {
    for (auto& [_, e] : entries_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  bool operator==(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (const auto& [name, e] : entries_) {
      auto it = other.entries_.find(name);
      if (it == other.entries_.end() || !(it->second.value == e.value)) return false;
    }
    return true;
  }

 private:
  struct Entry {
    Tensor value;
    std::vector<double> grad;
  };

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("params: unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("params: unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace deground
