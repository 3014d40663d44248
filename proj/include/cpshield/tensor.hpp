#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpshield::ad {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

class Tape;

/// A dense row-major f32 array. Values are immutable once constructed;
/// gradient participation is opt-in by creating the tensor through
/// Tape::leaf or by deriving it from taped operands.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float v) { return Tensor({1}, {v}); }
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float v);

  bool defined() const { return values_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(values_ ? values_->size() : 0); }
  const std::vector<float>& values() const { return *values_; }

  /// Value of a single-element tensor.
  float item() const;

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  /// Same values, no tape linkage.
  Tensor detach() const;

 private:
  friend class Tape;
  std::shared_ptr<const std::vector<float>> values_;
  Shape shape_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Reverse-mode gradient tape. Nodes are appended in execution order, which
/// is automatically topological; backward() walks them once in reverse.
/// Single-threaded by contract.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<float>& upstream, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Register a grad-enabled leaf holding a copy of `values`.
  Tensor leaf(Shape shape, std::vector<float> values);
  Tensor leaf(const Tensor& t) { return leaf(t.shape(), t.values()); }

  /// Record an operation result. `backward` receives the upstream gradient
  /// for this node and accumulates into the parents' buffers.
  Tensor make(Shape shape, std::vector<float> values, BackwardFn backward);

  /// Seed d(loss)/d(loss)=1 and propagate. `loss` must be a scalar on this
  /// tape. Clears any previous gradients first.
  void backward(const Tensor& loss);

  bool has_grad(const Tensor& t) const;
  const std::vector<float>& grad(const Tensor& t) const;

  /// Gradient accumulation buffer for a node (allocated on demand).
  std::vector<float>& grad_buffer(int node);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::int64_t numel = 0;
    BackwardFn backward;  // empty for leaves
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<float>> grads_;
};

/// Tape shared by the operands, or nullptr when all are constants.
/// Throws std::invalid_argument when operands live on different tapes.
Tape* joint_tape(std::initializer_list<const Tensor*> operands);

}  // namespace cpshield::ad
