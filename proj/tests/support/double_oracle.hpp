#pragma once

// Double-precision oracle for tight-tolerance gradient checks. The forward
// function is an independent reimplementation (not the f32 engine), and the
// derivative is taken by central differences in double, so the oracle noise
// floor sits far below the 1e-4 comparison tolerance.

#include <cmath>
#include <functional>
#include <vector>

namespace cpshield::testing {

using DoubleFn = std::function<double(const std::vector<std::vector<double>>&)>;

inline std::vector<std::vector<double>> to_double(const std::vector<std::vector<float>>& in) {
  std::vector<std::vector<double>> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i].assign(in[i].begin(), in[i].end());
  return out;
}

/// Central finite difference d f / d inputs[i][e] at step h.
inline double central_diff(const DoubleFn& f, std::vector<std::vector<double>> inputs,
                           std::size_t i, std::size_t e, double h = 1e-5) {
  inputs[i][e] += h;
  const double fp = f(inputs);
  inputs[i][e] -= 2 * h;
  const double fm = f(inputs);
  return (fp - fm) / (2 * h);
}

struct FdMismatch {
  bool ok = true;
  std::size_t input = 0, elem = 0;
  double analytic = 0, fd = 0;
};

/// Compare engine gradients against the double-FD oracle with the unit-floor
/// relative criterion |g - fd| <= tol * max(1, |g|, |fd|).
inline FdMismatch compare_grads(const DoubleFn& oracle,
                                const std::vector<std::vector<float>>& inputs,
                                const std::vector<std::vector<float>>& engine_grads,
                                double tol, double h = 1e-5) {
  const auto dinputs = to_double(inputs);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      const double fd = central_diff(oracle, dinputs, i, e, h);
      const double g = engine_grads[i].empty() ? 0.0 : static_cast<double>(engine_grads[i][e]);
      const double scale = std::max({1.0, std::fabs(g), std::fabs(fd)});
      if (std::fabs(g - fd) > tol * scale) return {false, i, e, g, fd};
    }
  }
  return {};
}

}  // namespace cpshield::testing
