#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "deground/params.hpp"
#include "deground/tensor.hpp"

namespace deground {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records a forward computation for reverse-mode differentiation.
///
/// Each recorded node owns its value and, when any input requires a
/// gradient, a backward rule that reads the node's gradient and accumulates
/// into the gradients of its inputs. Parameter leaves are bound to a
/// ParamStore; backward() adds their gradients into the store.
class Tape {
 public:
  /// Backward rule, invoked as rule(tape, node id).
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  explicit Tape(ParamStore& store) : store_(&store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return Var(this, nodes_.size() - 1);
  }

  /// Leaf bound to parameter `name`; repeated lookups share one node.
  Var param(const std::string& name) {
    if (!store_) throw Error("tape: no parameter store bound");
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return Var(this, it->second);
    nodes_.push_back(Node{store_->value(name), {}, {}, true});
    param_nodes_.emplace(name, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward rule) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(rule));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward rule) {
    bool needs = false;
    for (const auto& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(rule) : Backward{}, needs});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of node `id`, allocated (zero) on first access.
  std::span<double> grad(std::size_t id) {
    auto& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  /// Back-propagates from a 1x1 root and accumulates parameter gradients
  /// into the bound store.
  void backward(const Var& root) {
    check_owned(root);
    if (root.value().size() != 1) {
      throw Error("tape: backward root must be a scalar, got " +
                  shape_string(root.value().shape()));
    }
    grad(root.id())[0] += 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
    if (store_) {
      for (const auto& [name, id] : param_nodes_) {
        const auto& g = nodes_[id].grad;
        if (g.empty()) continue;
        auto dst = store_->grad(name);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    }
  }

  /// Names of the parameters this tape has read.
  std::set<std::string> touched_params() const {
    std::set<std::string> out;
    for (const auto& [name, _] : param_nodes_) out.insert(name);
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Backward backward;
    bool requires_grad = false;
  };

  void check_owned(const Var& v) const {
    if (v.tape_ != this) throw Error("tape: variable belongs to another tape");
  }

  ParamStore* store_ = nullptr;
  std::deque<Node> nodes_;  // deque: values stay put while the tape grows
  std::map<std::string, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace deground
