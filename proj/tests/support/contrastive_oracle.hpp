#pragma once

// Brute-force double-precision reference for the centered contrastive loss,
// written directly from the pairwise definition with explicit loops. Kept
// independent of the tape implementation so it can serve as its oracle.

#include <cmath>
#include <optional>
#include <vector>

namespace cpshield::testing {

enum class RefDenominator { AllPairs, PositiveOnly };
enum class RefSelector { PositivePairs, NegativePairs };

struct RefBatch {
  std::vector<std::vector<double>> embeddings;
  std::vector<int> labels;
};

inline std::vector<double> ref_center(const RefBatch& b, int cls) {
  std::vector<double> c;
  int count = 0;
  for (std::size_t i = 0; i < b.embeddings.size(); ++i) {
    if (b.labels[i] != cls) continue;
    if (c.empty()) c.assign(b.embeddings[i].size(), 0.0);
    for (std::size_t d = 0; d < c.size(); ++d) c[d] += b.embeddings[i][d];
    ++count;
  }
  for (auto& v : c) v /= count;
  return c;
}

inline double ref_cosine(const std::vector<double>& u, const std::vector<double>& v) {
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu < 1e-8 || nv < 1e-8) return 0.0;  // zero-vector guard, as in the engine
  return dot / (nu * nv + 1e-8);
}

struct RefCentered {
  std::vector<std::vector<double>> shifted;
};

inline RefCentered ref_shift(const RefBatch& b) {
  const auto cb = ref_center(b, 0);
  const auto cm = ref_center(b, 1);
  RefCentered out;
  for (std::size_t i = 0; i < b.embeddings.size(); ++i) {
    const auto& center = b.labels[i] == 0 ? cb : cm;
    std::vector<double> s(b.embeddings[i].size());
    for (std::size_t d = 0; d < s.size(); ++d) s[d] = b.embeddings[i][d] - center[d];
    out.shifted.push_back(std::move(s));
  }
  return out;
}

inline std::optional<double> ref_pair_loss(std::size_t m, std::size_t n, const RefBatch& b,
                                           double tau, RefDenominator denom) {
  const auto centered = ref_shift(b);
  double z = 0;
  bool any = false;
  for (std::size_t o = 0; o < b.embeddings.size(); ++o) {
    if (o == m) continue;
    if (denom == RefDenominator::PositiveOnly && b.labels[o] != b.labels[m]) continue;
    z += std::exp(ref_cosine(centered.shifted[m], centered.shifted[o]) / tau);
    any = true;
  }
  if (!any) return std::nullopt;
  const double num = std::exp(ref_cosine(centered.shifted[m], centered.shifted[n]) / tau);
  return -std::log(num / z);
}

inline double ref_batch_loss(const RefBatch& b, double tau, RefDenominator denom,
                             RefSelector selector) {
  const std::size_t n = b.embeddings.size();
  double total = 0;
  for (std::size_t m = 0; m < n; ++m) {
    for (std::size_t k = m + 1; k < n; ++k) {
      const bool positive = b.labels[m] == b.labels[k];
      const bool keep = selector == RefSelector::PositivePairs ? positive : !positive;
      if (!keep) continue;
      auto l = ref_pair_loss(m, k, b, tau, denom);
      if (l) total += *l;
    }
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  return total / pairs;
}

}  // namespace cpshield::testing
