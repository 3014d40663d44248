#pragma once

#include "cpshield/tensor.hpp"

namespace cpshield::ad {

// Elementwise binary ops. Shapes must match, or one operand may be a
// single-element scalar (the only broadcasting form supported).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // throws on a zero divisor element
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

// Elementwise unary ops.
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // requires strictly positive inputs
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sign(const Tensor& x);                      // zero gradient
Tensor clamp(const Tensor& x, float lo, float hi); // zero gradient outside [lo, hi]

/// [M x K] * [K x N] -> [M x N].
Tensor matmul(const Tensor& a, const Tensor& b);

/// x:[In] or [B,In], w:[Out,In], b:[Out] (pass an undefined Tensor for no bias).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Cross-correlation. x:[Cin,H,W], k:[Cout,Cin,kH,kW], bias:[Cout] optional.
/// Output spatial size (H + 2*pad - kH)/stride + 1 must be integral.
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int pad);
Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad);

/// Translate a [C,H,W] map by (dr, dc) cells; vacated cells are zero.
Tensor shift2d(const Tensor& x, int dr, int dc);

Tensor reshape(const Tensor& x, Shape shape);

/// [C,H,W] -> [H*W, C] so per-cell channel vectors become rows.
Tensor channels_last(const Tensor& x);

/// Stack N same-shape tensors into [N, ...].
Tensor stack(const std::vector<Tensor>& parts);

/// Single element as a scalar tensor (differentiable gather).
Tensor at(const Tensor& x, std::int64_t flat_index);

// Reductions. axis=-1 reduces over all elements.
Tensor sum(const Tensor& x, int axis = -1);
Tensor mean(const Tensor& x, int axis = -1);
Tensor max(const Tensor& x, int axis = -1);  // subgradient to the first max element
/// Non-differentiable; index of the first maximum element.
std::int64_t argmax(const Tensor& x);

/// Mean over rows of -log softmax(logits)[label]; max-subtraction stabilized.
/// Optional per-row weights (normalized by their sum rather than by N).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             const std::vector<float>& weights = {});

/// u.v / (|u||v| + eps), eps=1e-8; exactly 0 when either norm < eps.
Tensor cosine_similarity(const Tensor& u, const Tensor& v);

/// Elementwise Huber: 0.5*d^2/beta for |d|<beta else |d|-0.5*beta, d=x-target.
Tensor smooth_l1(const Tensor& x, const Tensor& target, float beta = 1.0f);

}  // namespace cpshield::ad
