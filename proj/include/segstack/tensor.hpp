#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <vector>

#include "segstack/common.hpp"

namespace segstack {

// Dense NCHW float tensor with an optional gradient buffer. Copying a Tensor
// copies the handle: data, grad and flags live in shared storage, so every
// handle to the same tensor sees the same gradient. By convention a tensor is
// written once by its producing op and treated as immutable afterwards.
class Tensor {
  struct Storage {
    std::vector<float> data;
    std::vector<float> grad;  // empty until ensure_grad()
    bool requires_grad = false;
    bool in_graph = false;
  };

 public:
  Tensor() = default;

  explicit Tensor(Shape4 shape, bool requires_grad = false)
      : shape_(shape), s_(std::make_shared<Storage>()) {
    check(shape.n >= 0 && shape.c >= 0 && shape.h >= 0 && shape.w >= 0,
          "Tensor: negative dimension in ", shape.str());
    s_->data.assign(std::size_t(shape.numel()), 0.0f);
    s_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape4 shape) { return Tensor(shape); }

  static Tensor full(Shape4 shape, float value) {
    Tensor t(shape);
    std::fill(t.s_->data.begin(), t.s_->data.end(), value);
    return t;
  }

  static Tensor from_values(Shape4 shape, std::vector<float> values) {
    check(std::int64_t(values.size()) == shape.numel(),
          "from_values: ", values.size(), " values for shape ", shape.str());
    Tensor t(shape);
    t.s_->data = std::move(values);
    return t;
  }

  static Tensor scalar(float value) { return full({1, 1, 1, 1}, value); }

  const Shape4& shape() const { return shape_; }
  std::int64_t numel() const { return shape_.numel(); }
  bool defined() const { return s_ != nullptr; }

  float* data() { return s_->data.data(); }
  const float* data() const { return s_->data.data(); }

  float& at(int n, int c, int h, int w) { return s_->data[index(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return s_->data[index(n, c, h, w)]; }

  float item() const {
    check(numel() == 1, "item: tensor is not scalar, shape ", shape_.str());
    return s_->data[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  // Set when a recorded op produced this tensor; such tensors carry gradient
  // buffers so the chain rule can pass through them.
  bool in_graph() const { return s_ && s_->in_graph; }
  void mark_in_graph() { s_->in_graph = true; }

  bool has_grad() const { return s_ && !s_->grad.empty(); }

  void ensure_grad() {
    if (s_->grad.empty()) s_->grad.assign(std::size_t(numel()), 0.0f);
  }

  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0f);
  }

  float* grad() {
    ensure_grad();
    return s_->grad.data();
  }
  const float* grad() const {
    check(has_grad(), "grad: no gradient buffer allocated");
    return s_->grad.data();
  }

  bool all_finite() const {
    for (float v : s_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor detached_copy() const {
    Tensor t(shape_);
    std::memcpy(t.data(), data(), std::size_t(numel()) * sizeof(float));
    return t;
  }

  std::size_t index(int n, int c, int h, int w) const {
    return ((std::size_t(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

 private:
  Shape4 shape_{};
  std::shared_ptr<Storage> s_;
};

// A named trainable tensor. Conv weights are (C_out, C_in, 3, 3); biases and
// batch-norm affine parameters are (1, C, 1, 1).
struct Parameter {
  std::string name;
  Tensor tensor;

  Parameter() = default;
  Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) {
    tensor.set_requires_grad(true);
  }
};

// Records the forward pass as a list of backward closures in execution order.
// One tape serves one training step and is consumed by backward().
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    check(!consumed_, "Tape: recording after backward()");
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void run_backward() {
    check(!consumed_, "Tape: backward() on a consumed tape");
    consumed_ = true;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// Seeds d(loss)/d(loss) = 1 and runs the tape in reverse. Gradients
// accumulate additively, so reusing a tensor twice in the forward pass
// yields the sum of both paths.
inline void backward(Tensor loss, Tape& tape) {
  check(loss.numel() == 1, "backward: loss must be scalar, got ", loss.shape().str());
  loss.ensure_grad();
  loss.grad()[0] += 1.0f;
  tape.run_backward();
}

namespace detail {

// Whether grad must flow into (or out of) this tensor.
inline bool tracked(const Tensor& t) { return t.requires_grad() || t.in_graph(); }

// Standard op epilogue: mark the output as produced on tape and give every
// tracked tensor a gradient buffer before the closure runs.
inline void prepare_node(Tape* tape, Tensor& out, std::initializer_list<Tensor*> inputs) {
  if (!tape) return;
  out.mark_in_graph();
  out.ensure_grad();
  for (Tensor* in : inputs)
    if (tracked(*in)) in->ensure_grad();
}

}  // namespace detail

}  // namespace segstack
