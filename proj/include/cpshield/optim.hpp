#pragma once

#include "cpshield/tensor.hpp"

#include <string>
#include <vector>

namespace cpshield::ad {

/// Named view over a model parameter block. Models hand these out so the
/// optimizer and checkpoint code can walk all parameters in declared order.
struct ParamRef {
  std::string name;
  Shape shape;
  std::vector<float>* data = nullptr;
};

struct OptimConfig {
  float learning_rate = 1e-3f;
  bool adaptive = false;  // false: plain SGD, true: Adam-style moments
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Plain SGD or, behind `adaptive`, first/second-moment updates. Holds one
/// accumulator slot per parameter, matched positionally.
class Optimizer {
 public:
  explicit Optimizer(OptimConfig config) : config_(config) {}

  const OptimConfig& config() const { return config_; }
  std::int64_t step_count() const { return step_count_; }

  /// p <- p - lr * g (or the adaptive variant). `grads` pairs with `params`
  /// positionally; shapes must match.
  void step(const std::vector<ParamRef>& params, const std::vector<std::vector<float>>& grads);

 private:
  struct Slot {
    std::vector<float> m, v;
  };
  OptimConfig config_;
  std::vector<Slot> slots_;
  std::int64_t step_count_ = 0;
};

}  // namespace cpshield::ad
