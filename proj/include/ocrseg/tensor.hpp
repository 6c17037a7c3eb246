#pragma once

// Dense tensor handle plus the reverse-mode gradient tape.
//
// A Tensor is a shared handle onto a node holding shape, data and an
// optional gradient buffer. Copies alias the same node. Ops in ops.hpp read
// their inputs and produce fresh nodes; when a GradTape is active on the
// calling thread and any input requires a gradient, the op appends a
// backward closure to the tape. Tape order is creation order, which is a
// valid topological order, so backward() is a single reverse sweep.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ocrseg/errors.hpp"
#include "ocrseg/instrumentation.hpp"

namespace ocrseg {

using Shape = std::vector<std::size_t>;

template <typename T>
using Buffer = std::vector<T, TrackedAllocator<T>>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::shared_ptr<Buffer<T>> data;
  std::shared_ptr<Buffer<T>> grad;
  bool requires_grad = false;

  Buffer<T>& ensure_grad() {
    if (!grad) grad = std::make_shared<Buffer<T>>(data->size(), T(0));
    return *grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{1}) {}

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<TensorNode<T>>()) {
    validate_shape(shape);
    node_->data = std::make_shared<Buffer<T>>(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::span<const T> values) : node_(std::make_shared<TensorNode<T>>()) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    node_->data = std::make_shared<Buffer<T>>(values.begin(), values.end());
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(std::move(shape), std::span<const T>(values.begin(), values.size())) {}

  // Node-sharing constructor used by ops; `data` must match `shape`.
  Tensor(Shape shape, std::shared_ptr<Buffer<T>> data) : node_(std::make_shared<TensorNode<T>>()) {
    validate_shape(shape);
    if (!data || data->size() != shape_numel(shape)) throw DimensionError("buffer does not match " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data->size(); }

  std::span<const T> data() const { return {node_->data->data(), node_->data->size()}; }
  // In-place access for parameter updates and test setup; not recorded on any tape.
  std::span<T> mutable_data() { return {node_->data->data(), node_->data->size()}; }

  T operator[](std::size_t i) const { return (*node_->data)[i]; }
  T& operator[](std::size_t i) { return (*node_->data)[i]; }
  T at(std::size_t r, std::size_t c) const { return (*node_->data)[r * node_->shape.back() + c]; }
  T at(std::size_t c, std::size_t y, std::size_t x) const {
    return (*node_->data)[(c * node_->shape[1] + y) * node_->shape[2] + x];
  }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return (*node_->data)[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return static_cast<bool>(node_->grad); }
  std::span<const T> grad() const {
    if (!node_->grad) throw StateError("tensor " + shape_str(shape()) + " has no gradient");
    return {node_->grad->data(), node_->grad->size()};
  }
  void zero_grad() { node_->grad.reset(); }

  Tensor clone() const { return Tensor(shape(), data()); }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero dimension");
    }
  }

  std::shared_ptr<TensorNode<T>> node_;
};

template <typename T>
class GradTape;

namespace detail {
template <typename T>
GradTape<T>*& active_tape_slot() {
  thread_local GradTape<T>* tape = nullptr;
  return tape;
}
}  // namespace detail

template <typename T>
GradTape<T>* active_tape() {
  return detail::active_tape_slot<T>();
}

template <typename T>
class GradTape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  using BackwardFn = std::function<void(const Buffer<T>& out_grad)>;

  struct Entry {
    std::string op;
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::string op, std::vector<NodePtr> inputs, NodePtr output, BackwardFn fn) {
    if (consumed_) throw ContractError("gradient tape already consumed by backward(); build a new tape");
    index_[output.get()] = entries_.size();
    entries_.push_back(Entry{std::move(op), std::move(inputs), std::move(output), std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool consumed() const { return consumed_; }

  // Reverse sweep from `loss`. Gradients accumulate into leaf buffers.
  // Returns the number of entries whose backward closure ran.
  std::size_t backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (consumed_) throw ContractError("gradient tape already consumed by backward()");
    auto it = index_.find(loss.node().get());
    if (it == index_.end()) throw ContractError("loss tensor was not recorded on this tape");
    consumed_ = true;
    loss.node()->ensure_grad()[0] += T(1);
    std::size_t visited = 0;
    for (std::size_t i = it->second + 1; i-- > 0;) {
      Entry& e = entries_[i];
      if (!e.output->grad) continue;
      e.backward(*e.output->grad);
      ++visited;
    }
    return visited;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<const TensorNode<T>*, std::size_t> index_;
  bool consumed_ = false;
};

// Makes `tape` the active tape for ops of scalar type T on this thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(GradTape<T>& tape) : previous_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<T>* previous_;
};

template <typename T>
std::size_t backward(const Tensor<T>& loss, GradTape<T>& tape) {
  return tape.backward(loss);
}

}  // namespace ocrseg
