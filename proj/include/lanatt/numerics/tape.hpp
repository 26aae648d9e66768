#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "lanatt/numerics/tensor.hpp"

namespace lanatt::numerics {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t index() const noexcept { return index_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the append order is a
/// topological order of the DAG and backward() walks it once in reverse.
/// Gradient buffers are zero-initialized on first touch and accumulate
/// additively across fan-out.
///
/// Parameter leaves reference caller-owned tensors, which must outlive the
/// tape. Outer-product gradient terms from `W * x` products against a
/// parameter leaf are batched and flushed as one matrix product per leaf at
/// the end of backward().
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value) {
    Node& n = push();
    n.value = std::move(value);
    return {this, nodes_.size() - 1};
  }

  /// Leaf referencing an external tensor; receives a gradient.
  Var parameter(const Tensor& value) {
    Node& n = push();
    n.external = &value;
    n.requires_grad = true;
    n.is_parameter = true;
    return {this, nodes_.size() - 1};
  }
  Var parameter(Tensor&&) = delete;

  /// Leaf referencing an external tensor that never receives a gradient.
  Var reference(const Tensor& value) {
    Node& n = push();
    n.external = &value;
    return {this, nodes_.size() - 1};
  }
  Var reference(Tensor&&) = delete;

  /// Owned leaf that receives a gradient.
  Var variable(Tensor value) {
    Node& n = push();
    n.value = std::move(value);
    n.requires_grad = true;
    n.is_parameter = true;
    return {this, nodes_.size() - 1};
  }

  /// Interior node. `fn` is only installed when some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
  }

  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    Node& n = push();
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw DomainError("tape: input belongs to another tape");
      n.inputs.push_back(v.index_);
      n.requires_grad = n.requires_grad || nodes_[v.index_].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t i) const {
    const Node& n = nodes_[i];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  bool is_parameter(std::size_t i) const { return nodes_[i].is_parameter; }
  const std::vector<std::size_t>& inputs(std::size_t i) const { return nodes_[i].inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient accumulator of node i, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t i) {
    Node& n = nodes_[i];
    if (n.grad.empty() && value(i).size() > 0) n.grad = Tensor::zeros_like(value(i));
    return n.grad;
  }

  bool has_grad(std::size_t i) const { return !nodes_[i].grad.empty(); }

  /// Queue grad(leaf) += grad(out) * value(rhs)^T for the end of backward().
  void defer_outer(std::size_t leaf, std::size_t out, std::size_t rhs) {
    Node& n = nodes_[leaf];
    if (n.deferred.empty()) deferred_leaves_.push_back(leaf);
    n.deferred.emplace_back(out, rhs);
  }

  void backward(Var loss) {
    if (loss.tape_ != this) throw DomainError("backward: loss belongs to another tape");
    if (value(loss.index_).size() != 1) throw DomainError("backward: loss must be a scalar");
    if (!nodes_[loss.index_].requires_grad) return;
    grad_buffer(loss.index_)[0] += 1.0;
    for (std::size_t k = loss.index_ + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.backward && !n.grad.empty()) n.backward(*this, k);
    }
    for (std::size_t leaf : deferred_leaves_) flush_deferred(leaf);
    deferred_leaves_.clear();
  }

  /// Gradient of the last backward() root w.r.t. v (zeros if unreached).
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.index_];
    return n.grad.empty() ? Tensor::zeros_like(value(v.index_)) : n.grad;
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_parameter = false;
    std::vector<std::pair<std::size_t, std::size_t>> deferred;
  };

  Node& push() { return nodes_.emplace_back(); }

  void flush_deferred(std::size_t leaf) {
    Node& n = nodes_[leaf];
    const Tensor& w = value(leaf);
    Eigen::Index live = 0;
    for (const auto& [out, rhs] : n.deferred)
      if (!nodes_[out].grad.empty()) live += static_cast<Eigen::Index>(value(rhs).cols());
    if (live > 0) {
      Eigen::MatrixXd outs(static_cast<Eigen::Index>(w.rows()), live);
      Eigen::MatrixXd rhss(static_cast<Eigen::Index>(w.cols()), live);
      Eigen::Index c = 0;
      for (const auto& [out, rhs] : n.deferred) {
        if (nodes_[out].grad.empty()) continue;
        const auto width = static_cast<Eigen::Index>(value(rhs).cols());
        outs.middleCols(c, width) = nodes_[out].grad.mat();
        rhss.middleCols(c, width) = value(rhs).mat();
        c += width;
      }
      grad_buffer(leaf).mat().noalias() += outs * rhss.transpose();
    }
    n.deferred.clear();
  }

  std::deque<Node> nodes_;
  std::vector<std::size_t> deferred_leaves_;
};

inline const Tensor& Var::value() const { return tape_->value(index_); }

}  // namespace lanatt::numerics
