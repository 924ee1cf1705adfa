#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dcnas/errors.hpp"

namespace dcnas {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // persistent accumulator, allocated on first flush
  std::vector<double> flow;  // scratch used inside a single backward replay
  std::uint64_t flow_epoch = 0;
  bool requires_grad = false;
};

// Cheap shared handle over a dense row-major f64 buffer. Tensors are values:
// copying the handle shares the storage, which is exactly what parameter
// transplanting and optimizer bookkeeping want.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, bool requires_grad) : data_(std::make_shared<TensorData>()) {
    data_->shape = std::move(shape);
    data_->value.assign(shape_numel(data_->shape), 0.0);
    data_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }

  static Tensor full(Shape shape, double fill, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (double& v : t.values()) v = fill;
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                       shape_str(shape));
    }
    Tensor t;
    t.data_ = std::make_shared<TensorData>();
    t.data_->shape = std::move(shape);
    t.data_->value = std::move(values);
    t.data_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_values({}, {v}, requires_grad);
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t dim(std::size_t i) const { return data_->shape[i]; }
  std::size_t numel() const { return data_->value.size(); }

  std::vector<double>& values() { return data_->value; }
  const std::vector<double>& values() const { return data_->value; }

  double scalar_value() const {
    if (numel() != 1) throw ContractError("scalar_value: tensor has " + std::to_string(numel()) + " elements");
    return data_->value[0];
  }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool b) { data_->requires_grad = b; }

  bool grad_allocated() const { return !data_->grad.empty(); }

  std::vector<double>& grad() {
    if (data_->grad.size() != data_->value.size()) data_->grad.assign(data_->value.size(), 0.0);
    return data_->grad;
  }

  const std::vector<double>& grad() const {
    if (data_->grad.size() != data_->value.size()) {
      throw ContractError("grad: gradient buffer not populated");
    }
    return data_->grad;
  }

  void zero_grad() {
    data_->grad.assign(data_->value.size(), 0.0);
  }

  const std::shared_ptr<TensorData>& state() const { return data_; }
  TensorData* node() const { return data_.get(); }

 private:
  std::shared_ptr<TensorData> data_;
};

// Define-by-run tape. Operations append a backward rule at creation time, so
// the list is topologically ordered by construction. backward() replays the
// rules in reverse against per-call "flow" buffers and then flushes each flow
// into the persistent grad accumulators; replaying twice therefore doubles
// every gradient exactly. The tape is single-threaded and is cleared by the
// training loop between steps.
class Tape {
 public:
  static Tape& active() {
    static thread_local Tape tape;
    return tape;
  }

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(std::function<void()> step) { entries_.push_back(std::move(step)); }

  std::size_t size() const { return entries_.size(); }

  void clear() {
    entries_.clear();
    touched_.clear();
  }

  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward: loss must be a scalar tensor");
    }
    if (!loss.requires_grad()) {
      throw ContractError("backward: loss is not connected to the tape");
    }
    ++flow_epoch_;
    touched_.clear();
    flow_accum(loss.state())[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    for (const auto& node : touched_) {
      if (node->grad.size() != node->value.size()) node->grad.assign(node->value.size(), 0.0);
      for (std::size_t i = 0; i < node->flow.size(); ++i) node->grad[i] += node->flow[i];
    }
    ++flow_epoch_;  // invalidate all flow buffers
    touched_.clear();
  }

  // Flow of a node within the current backward replay; null when the loss
  // does not reach the node.
  const std::vector<double>* flow(const TensorData* node) const {
    return node->flow_epoch == flow_epoch_ ? &node->flow : nullptr;
  }

  std::vector<double>& flow_accum(const std::shared_ptr<TensorData>& node) {
    if (node->flow_epoch != flow_epoch_) {
      node->flow.assign(node->value.size(), 0.0);
      node->flow_epoch = flow_epoch_;
      touched_.push_back(node);
    }
    return node->flow;
  }

 private:
  std::vector<std::function<void()>> entries_;
  std::vector<std::shared_ptr<TensorData>> touched_;
  std::uint64_t flow_epoch_ = 1;
  bool recording_ = true;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tape::active().recording()) { Tape::active().set_recording(false); }
  ~NoGradGuard() { Tape::active().set_recording(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace dcnas
