#pragma once

#include "cpshield/rng.hpp"
#include "cpshield/tensor.hpp"

namespace cpshield::testing {

inline ad::Tensor random_tensor(Rng& rng, ad::Shape shape, float lo = -1.0f, float hi = 1.0f) {
  std::vector<float> v(static_cast<std::size_t>(ad::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform_f(lo, hi);
  return ad::Tensor(std::move(shape), std::move(v));
}

}  // namespace cpshield::testing
