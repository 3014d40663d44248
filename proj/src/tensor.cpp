#include "cpshield/tensor.hpp"

#include <sstream>

namespace cpshield::ad {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)) {
  for (int d : shape_) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
  }
  if (shape_numel(shape_) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape_));
  }
  values_ = std::make_shared<const std::vector<float>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, float value) {
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)), value);
  return Tensor(std::move(shape), std::move(v));
}

float Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() requires a single-element tensor");
  return (*values_)[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

Tensor Tape::leaf(Shape shape, std::vector<float> values) {
  Tensor t(std::move(shape), std::move(values));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{t.size(), BackwardFn{}});
  return t;
}

Tensor Tape::make(Shape shape, std::vector<float> values, BackwardFn backward) {
  Tensor t(std::move(shape), std::move(values));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{t.size(), std::move(backward)});
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw std::invalid_argument("loss is not recorded on this tape");
  if (loss.size() != 1) throw std::invalid_argument("backward requires a scalar loss");
  grads_.assign(nodes_.size(), {});
  grad_buffer(loss.node()).assign(1, 1.0f);
  for (int i = loss.node(); i >= 0; --i) {
    if (grads_[static_cast<std::size_t>(i)].empty()) continue;  // not reachable from loss
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.backward) node.backward(grads_[static_cast<std::size_t>(i)], *this);
  }
}

bool Tape::has_grad(const Tensor& t) const {
  return t.tape() == this && t.node() >= 0 &&
         static_cast<std::size_t>(t.node()) < grads_.size() &&
         !grads_[static_cast<std::size_t>(t.node())].empty();
}

const std::vector<float>& Tape::grad(const Tensor& t) const {
  if (t.tape() != this) throw std::invalid_argument("tensor is not on this tape");
  if (!has_grad(t)) {
    static const std::vector<float> kEmpty;
    return kEmpty;
  }
  return grads_[static_cast<std::size_t>(t.node())];
}

std::vector<float>& Tape::grad_buffer(int node) {
  auto& buf = grads_.at(static_cast<std::size_t>(node));
  if (buf.empty()) buf.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].numel), 0.0f);
  return buf;
}

Tape* joint_tape(std::initializer_list<const Tensor*> operands) {
  Tape* tape = nullptr;
  for (const Tensor* t : operands) {
    if (!t->on_tape()) continue;
    if (tape && tape != t->tape()) throw std::invalid_argument("operands live on different tapes");
    tape = t->tape();
  }
  return tape;
}

}  // namespace cpshield::ad
