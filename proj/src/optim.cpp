#include "cpshield/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cpshield::ad {

void Optimizer::step(const std::vector<ParamRef>& params,
                     const std::vector<std::vector<float>>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer: param/grad count mismatch");
  if (slots_.empty()) slots_.resize(params.size());
  if (slots_.size() != params.size()) throw std::invalid_argument("optimizer: parameter set changed");

  ++step_count_;
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<float>& data = *params[p].data;
    const std::vector<float>& g = grads[p];
    if (g.size() != data.size()) throw std::invalid_argument("optimizer: gradient shape mismatch for " + params[p].name);
    if (!config_.adaptive) {
      for (std::size_t i = 0; i < data.size(); ++i) data[i] -= config_.learning_rate * g[i];
      continue;
    }
    Slot& slot = slots_[p];
    if (slot.m.empty()) {
      slot.m.assign(data.size(), 0.0f);
      slot.v.assign(data.size(), 0.0f);
    }
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < data.size(); ++i) {
      slot.m[i] = config_.beta1 * slot.m[i] + (1.0f - config_.beta1) * g[i];
      slot.v[i] = config_.beta2 * slot.v[i] + (1.0f - config_.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      data[i] -= static_cast<float>(config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

}  // namespace cpshield::ad
