#include "cpshield/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cpshield::ad {

namespace {

void check_binary_shapes(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a.shape(), b.shape()) && a.size() != 1 && b.size() != 1) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

const Shape& broadcast_shape(const Tensor& a, const Tensor& b) {
  return a.size() == 1 && b.size() != 1 ? b.shape() : a.shape();
}

// Elementwise binary op with scalar broadcast. dfa/dfb produce the partial
// with respect to a resp. b at one element.
template <typename F, typename Da, typename Db>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, Da dfa, Db dfb) {
  check_binary_shapes(a, b, name);
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t n = static_cast<std::size_t>(std::max(a.size(), b.size()));
  const std::size_t ia = a.size() == 1 ? 0 : 1;  // per-element stride
  const std::size_t ib = b.size() == 1 ? 0 : 1;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i * ia], bv[i * ib]);

  Tape* tape = joint_tape({&a, &b});
  Shape shape = broadcast_shape(a, b);
  if (!tape) return Tensor(std::move(shape), std::move(out));
  const int pa = a.on_tape() ? a.node() : -1;
  const int pb = b.on_tape() ? b.node() : -1;
  return tape->make(std::move(shape), std::move(out),
                    [a, b, pa, pb, ia, ib, dfa, dfb](const std::vector<float>& g, Tape& t) {
                      const auto& av = a.values();
                      const auto& bv = b.values();
                      if (pa >= 0) {
                        auto& ga = t.grad_buffer(pa);
                        if (ia == 0) {
                          double acc = 0;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            acc += static_cast<double>(g[i]) * dfa(av[0], bv[i * ib]);
                          ga[0] += static_cast<float>(acc);
                        } else {
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i] * dfa(av[i], bv[i * ib]);
                        }
                      }
                      if (pb >= 0) {
                        auto& gb = t.grad_buffer(pb);
                        if (ib == 0) {
                          double acc = 0;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            acc += static_cast<double>(g[i]) * dfb(av[i * ia], bv[0]);
                          gb[0] += static_cast<float>(acc);
                        } else {
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gb[i] += g[i] * dfb(av[i * ia], bv[i]);
                        }
                      }
                    });
}

template <typename F, typename D>
Tensor unary_op(const Tensor& x, F f, D df) {
  const auto& xv = x.values();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  if (!x.on_tape()) return Tensor(x.shape(), std::move(out));
  const int px = x.node();
  return x.tape()->make(x.shape(), std::move(out),
                        [x, px, df](const std::vector<float>& g, Tape& t) {
                          const auto& xv = x.values();
                          auto& gx = t.grad_buffer(px);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i]);
                        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
      [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
      [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](float x, float y) { return x * y; }, [](float, float y) { return y; },
      [](float x, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (float y : b.values()) {
    if (y == 0.0f) throw std::domain_error("div: division by zero");
  }
  return binary_op(
      "div", a, b, [](float x, float y) { return x / y; },
      [](float, float y) { return 1.0f / y; },
      [](float x, float y) { return -x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  // Ties route the gradient to `a`.
  return binary_op(
      "minimum", a, b, [](float x, float y) { return x <= y ? x : y; },
      [](float x, float y) { return x <= y ? 1.0f : 0.0f; },
      [](float x, float y) { return x <= y ? 0.0f : 1.0f; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "maximum", a, b, [](float x, float y) { return x >= y ? x : y; },
      [](float x, float y) { return x >= y ? 1.0f : 0.0f; },
      [](float x, float y) { return x >= y ? 0.0f : 1.0f; });
}

Tensor neg(const Tensor& x) {
  return unary_op(x, [](float v) { return -v; }, [](float) { return -1.0f; });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, [](float v) { return std::exp(v); }, [](float v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  for (float v : x.values()) {
    if (!(v > 0.0f)) throw std::domain_error("log: input must be strictly positive");
  }
  return unary_op(x, [](float v) { return std::log(v); }, [](float v) { return 1.0f / v; });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, [](float v) { return v > 0.0f ? v : 0.0f; },
                  [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
  auto s = [](float v) { return 1.0f / (1.0f + std::exp(-v)); };
  return unary_op(x, s, [s](float v) {
    const float y = s(v);
    return y * (1.0f - y);
  });
}

Tensor sign(const Tensor& x) {
  return unary_op(x, [](float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); },
                  [](float) { return 0.0f; });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary_op(x, [lo, hi](float v) { return std::min(std::max(v, lo), hi); },
                  [lo, hi](float v) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw std::invalid_argument("matmul: operands must be 2-D");
  }
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<float> out(static_cast<std::size_t>(m) * n);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < n; ++c) {
      double acc = 0;
      for (int i = 0; i < k; ++i)
        acc += static_cast<double>(av[r * k + i]) * bv[i * n + c];
      out[static_cast<std::size_t>(r) * n + c] = static_cast<float>(acc);
    }
  }
  Tape* tape = joint_tape({&a, &b});
  if (!tape) return Tensor({m, n}, std::move(out));
  const int pa = a.on_tape() ? a.node() : -1;
  const int pb = b.on_tape() ? b.node() : -1;
  return tape->make({m, n}, std::move(out), [a, b, pa, pb, m, k, n](const std::vector<float>& g, Tape& t) {
    const auto& av = a.values();
    const auto& bv = b.values();
    if (pa >= 0) {  // dA = G * B^T
      auto& ga = t.grad_buffer(pa);
      for (int r = 0; r < m; ++r)
        for (int i = 0; i < k; ++i) {
          double acc = 0;
          for (int c = 0; c < n; ++c)
            acc += static_cast<double>(g[static_cast<std::size_t>(r) * n + c]) * bv[i * n + c];
          ga[static_cast<std::size_t>(r) * k + i] += static_cast<float>(acc);
        }
    }
    if (pb >= 0) {  // dB = A^T * G
      auto& gb = t.grad_buffer(pb);
      for (int i = 0; i < k; ++i)
        for (int c = 0; c < n; ++c) {
          double acc = 0;
          for (int r = 0; r < m; ++r)
            acc += static_cast<double>(av[static_cast<std::size_t>(r) * k + i]) *
                   g[static_cast<std::size_t>(r) * n + c];
          gb[static_cast<std::size_t>(i) * n + c] += static_cast<float>(acc);
        }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.shape().size() != 2) throw std::invalid_argument("linear: weight must be [Out,In]");
  const int out_dim = w.shape()[0], in_dim = w.shape()[1];
  int batch = 1;
  bool batched = false;
  if (x.shape().size() == 1) {
    if (x.shape()[0] != in_dim) throw std::invalid_argument("linear: input length mismatch");
  } else if (x.shape().size() == 2) {
    batched = true;
    batch = x.shape()[0];
    if (x.shape()[1] != in_dim) throw std::invalid_argument("linear: input width mismatch");
  } else {
    throw std::invalid_argument("linear: input must be 1-D or 2-D");
  }
  const bool has_bias = b.defined();
  if (has_bias && (b.shape().size() != 1 || b.shape()[0] != out_dim)) {
    throw std::invalid_argument("linear: bias length mismatch");
  }

  const auto& xv = x.values();
  const auto& wv = w.values();
  std::vector<float> out(static_cast<std::size_t>(batch) * out_dim);
  for (int r = 0; r < batch; ++r) {
    for (int o = 0; o < out_dim; ++o) {
      double acc = has_bias ? b.values()[static_cast<std::size_t>(o)] : 0.0;
      const float* xr = xv.data() + static_cast<std::size_t>(r) * in_dim;
      const float* wo = wv.data() + static_cast<std::size_t>(o) * in_dim;
      for (int i = 0; i < in_dim; ++i) acc += static_cast<double>(xr[i]) * wo[i];
      out[static_cast<std::size_t>(r) * out_dim + o] = static_cast<float>(acc);
    }
  }
  Shape out_shape = batched ? Shape{batch, out_dim} : Shape{out_dim};
  Tape* tape = has_bias ? joint_tape({&x, &w, &b}) : joint_tape({&x, &w});
  if (!tape) return Tensor(std::move(out_shape), std::move(out));
  const int px = x.on_tape() ? x.node() : -1;
  const int pw = w.on_tape() ? w.node() : -1;
  const int pb = has_bias && b.on_tape() ? b.node() : -1;
  return tape->make(std::move(out_shape), std::move(out),
                    [x, w, px, pw, pb, batch, in_dim, out_dim](const std::vector<float>& g, Tape& t) {
                      const auto& xv = x.values();
                      const auto& wv = w.values();
                      if (px >= 0) {
                        auto& gx = t.grad_buffer(px);
                        for (int r = 0; r < batch; ++r)
                          for (int i = 0; i < in_dim; ++i) {
                            double acc = 0;
                            for (int o = 0; o < out_dim; ++o)
                              acc += static_cast<double>(g[static_cast<std::size_t>(r) * out_dim + o]) *
                                     wv[static_cast<std::size_t>(o) * in_dim + i];
                            gx[static_cast<std::size_t>(r) * in_dim + i] += static_cast<float>(acc);
                          }
                      }
                      if (pw >= 0) {
                        auto& gw = t.grad_buffer(pw);
                        for (int o = 0; o < out_dim; ++o)
                          for (int i = 0; i < in_dim; ++i) {
                            double acc = 0;
                            for (int r = 0; r < batch; ++r)
                              acc += static_cast<double>(g[static_cast<std::size_t>(r) * out_dim + o]) *
                                     xv[static_cast<std::size_t>(r) * in_dim + i];
                            gw[static_cast<std::size_t>(o) * in_dim + i] += static_cast<float>(acc);
                          }
                      }
                      if (pb >= 0) {
                        auto& gb = t.grad_buffer(pb);
                        for (int o = 0; o < out_dim; ++o) {
                          double acc = 0;
                          for (int r = 0; r < batch; ++r)
                            acc += g[static_cast<std::size_t>(r) * out_dim + o];
                          gb[static_cast<std::size_t>(o)] += static_cast<float>(acc);
                        }
                      }
                    });
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int pad) {
  if (x.shape().size() != 3 || k.shape().size() != 4) {
    throw std::invalid_argument("conv2d: expects x:[Cin,H,W], k:[Cout,Cin,kH,kW]");
  }
  const int cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int cout = k.shape()[0], kcin = k.shape()[1], kh = k.shape()[2], kw = k.shape()[3];
  if (cin != kcin) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  if (kh > h + 2 * pad || kw > w + 2 * pad) throw std::invalid_argument("conv2d: kernel exceeds padded input");
  if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0) {
    throw std::invalid_argument("conv2d: non-integral output size");
  }
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.shape().size() != 1 || bias.shape()[0] != cout)) {
    throw std::invalid_argument("conv2d: bias length mismatch");
  }

  const auto& xv = x.values();
  const auto& kv = k.values();
  std::vector<float> out(static_cast<std::size_t>(cout) * oh * ow);
  for (int co = 0; co < cout; ++co) {
    const float* kbase = kv.data() + static_cast<std::size_t>(co) * cin * kh * kw;
    for (int r = 0; r < oh; ++r) {
      for (int c = 0; c < ow; ++c) {
        double acc = has_bias ? bias.values()[static_cast<std::size_t>(co)] : 0.0;
        for (int ci = 0; ci < cin; ++ci) {
          const float* xc = xv.data() + static_cast<std::size_t>(ci) * h * w;
          const float* kc = kbase + static_cast<std::size_t>(ci) * kh * kw;
          for (int i = 0; i < kh; ++i) {
            const int ih = r * stride - pad + i;
            if (ih < 0 || ih >= h) continue;
            for (int j = 0; j < kw; ++j) {
              const int iw = c * stride - pad + j;
              if (iw < 0 || iw >= w) continue;
              acc += static_cast<double>(xc[ih * w + iw]) * kc[i * kw + j];
            }
          }
        }
        out[(static_cast<std::size_t>(co) * oh + r) * ow + c] = static_cast<float>(acc);
      }
    }
  }

  Tape* tape = has_bias ? joint_tape({&x, &k, &bias}) : joint_tape({&x, &k});
  if (!tape) return Tensor({cout, oh, ow}, std::move(out));
  const int px = x.on_tape() ? x.node() : -1;
  const int pk = k.on_tape() ? k.node() : -1;
  const int pbias = has_bias && bias.on_tape() ? bias.node() : -1;
  return tape->make(
      {cout, oh, ow}, std::move(out),
      [x, k, px, pk, pbias, cin, h, w, cout, kh, kw, oh, ow, stride, pad](const std::vector<float>& g, Tape& t) {
        const auto& xv = x.values();
        const auto& kv = k.values();
        float* gx = px >= 0 ? t.grad_buffer(px).data() : nullptr;
        float* gk = pk >= 0 ? t.grad_buffer(pk).data() : nullptr;
        float* gb = pbias >= 0 ? t.grad_buffer(pbias).data() : nullptr;
        for (int co = 0; co < cout; ++co) {
          const std::size_t kbase = static_cast<std::size_t>(co) * cin * kh * kw;
          for (int r = 0; r < oh; ++r) {
            for (int c = 0; c < ow; ++c) {
              const float go = g[(static_cast<std::size_t>(co) * oh + r) * ow + c];
              if (go == 0.0f) continue;
              if (gb) gb[co] += go;
              for (int ci = 0; ci < cin; ++ci) {
                const std::size_t xoff = static_cast<std::size_t>(ci) * h * w;
                const std::size_t koff = kbase + static_cast<std::size_t>(ci) * kh * kw;
                for (int i = 0; i < kh; ++i) {
                  const int ih = r * stride - pad + i;
                  if (ih < 0 || ih >= h) continue;
                  for (int j = 0; j < kw; ++j) {
                    const int iw = c * stride - pad + j;
                    if (iw < 0 || iw >= w) continue;
                    if (gk) gk[koff + i * kw + j] += go * xv[xoff + ih * w + iw];
                    if (gx) gx[xoff + ih * w + iw] += go * kv[koff + i * kw + j];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad) {
  return conv2d(x, k, Tensor{}, stride, pad);
}

Tensor shift2d(const Tensor& x, int dr, int dc) {
  if (x.shape().size() != 3) throw std::invalid_argument("shift2d: expects [C,H,W]");
  const int ch = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const auto& xv = x.values();
  std::vector<float> out(xv.size(), 0.0f);
  for (int c = 0; c < ch; ++c) {
    for (int r = 0; r < h; ++r) {
      const int sr = r - dr;
      if (sr < 0 || sr >= h) continue;
      for (int cc = 0; cc < w; ++cc) {
        const int sc = cc - dc;
        if (sc < 0 || sc >= w) continue;
        out[(static_cast<std::size_t>(c) * h + r) * w + cc] =
            xv[(static_cast<std::size_t>(c) * h + sr) * w + sc];
      }
    }
  }
  if (!x.on_tape()) return Tensor(x.shape(), std::move(out));
  const int px = x.node();
  return x.tape()->make(x.shape(), std::move(out),
                        [px, ch, h, w, dr, dc](const std::vector<float>& g, Tape& t) {
                          auto& gx = t.grad_buffer(px);
                          for (int c = 0; c < ch; ++c)
                            for (int r = 0; r < h; ++r) {
                              const int sr = r - dr;
                              if (sr < 0 || sr >= h) continue;
                              for (int cc = 0; cc < w; ++cc) {
                                const int sc = cc - dc;
                                if (sc < 0 || sc >= w) continue;
                                gx[(static_cast<std::size_t>(c) * h + sr) * w + sc] +=
                                    g[(static_cast<std::size_t>(c) * h + r) * w + cc];
                              }
                            }
                        });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: element count mismatch for " + shape_str(shape));
  }
  std::vector<float> out = x.values();
  if (!x.on_tape()) return Tensor(std::move(shape), std::move(out));
  const int px = x.node();
  return x.tape()->make(std::move(shape), std::move(out),
                        [px](const std::vector<float>& g, Tape& t) {
                          auto& gx = t.grad_buffer(px);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        });
}

Tensor channels_last(const Tensor& x) {
  if (x.shape().size() != 3) throw std::invalid_argument("channels_last: expects [C,H,W]");
  const int ch = x.shape()[0];
  const std::int64_t plane = static_cast<std::int64_t>(x.shape()[1]) * x.shape()[2];
  const auto& xv = x.values();
  std::vector<float> out(xv.size());
  for (std::int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < ch; ++c)
      out[static_cast<std::size_t>(p * ch + c)] = xv[static_cast<std::size_t>(c * plane + p)];
  Shape shape{static_cast<int>(plane), ch};
  if (!x.on_tape()) return Tensor(std::move(shape), std::move(out));
  const int px = x.node();
  return x.tape()->make(std::move(shape), std::move(out),
                        [px, ch, plane](const std::vector<float>& g, Tape& t) {
                          auto& gx = t.grad_buffer(px);
                          for (std::int64_t p = 0; p < plane; ++p)
                            for (int c = 0; c < ch; ++c)
                              gx[static_cast<std::size_t>(c * plane + p)] +=
                                  g[static_cast<std::size_t>(p * ch + c)];
                        });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack: empty input");
  const Shape& part_shape = parts[0].shape();
  const std::size_t part_n = static_cast<std::size_t>(parts[0].size());
  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) {
    if (!same_shape(p.shape(), part_shape)) throw std::invalid_argument("stack: shape mismatch");
    ptrs.push_back(&p);
  }
  std::vector<float> out;
  out.reserve(part_n * parts.size());
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Shape shape;
  shape.push_back(static_cast<int>(parts.size()));
  shape.insert(shape.end(), part_shape.begin(), part_shape.end());

  Tape* tape = nullptr;
  for (const auto& p : parts) {
    Tape* pt = joint_tape({&p});
    if (pt) {
      if (tape && tape != pt) throw std::invalid_argument("stack: operands live on different tapes");
      tape = pt;
    }
  }
  if (!tape) return Tensor(std::move(shape), std::move(out));
  std::vector<int> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(p.on_tape() ? p.node() : -1);
  return tape->make(std::move(shape), std::move(out),
                    [nodes, part_n](const std::vector<float>& g, Tape& t) {
                      for (std::size_t p = 0; p < nodes.size(); ++p) {
                        if (nodes[p] < 0) continue;
                        auto& gp = t.grad_buffer(nodes[p]);
                        const float* gs = g.data() + p * part_n;
                        for (std::size_t i = 0; i < part_n; ++i) gp[i] += gs[i];
                      }
                    });
}

Tensor at(const Tensor& x, std::int64_t flat_index) {
  if (flat_index < 0 || flat_index >= x.size()) throw std::invalid_argument("at: index out of range");
  std::vector<float> out{x.values()[static_cast<std::size_t>(flat_index)]};
  if (!x.on_tape()) return Tensor({1}, std::move(out));
  const int px = x.node();
  return x.tape()->make({1}, std::move(out),
                        [px, flat_index](const std::vector<float>& g, Tape& t) {
                          t.grad_buffer(px)[static_cast<std::size_t>(flat_index)] += g[0];
                        });
}

namespace {

struct AxisSplit {
  std::int64_t outer, n, inner;
  Shape out_shape;
};

AxisSplit split_axis(const Tensor& x, int axis, const char* op) {
  if (x.size() == 0) throw std::invalid_argument(std::string(op) + ": empty tensor");
  AxisSplit s{1, 1, 1, {}};
  if (axis < 0) {  // full reduction
    s.n = x.size();
    s.out_shape = {1};
    return s;
  }
  const auto& shape = x.shape();
  if (axis >= static_cast<int>(shape.size())) {
    throw std::invalid_argument(std::string(op) + ": axis out of range");
  }
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (static_cast<int>(i) != axis) s.out_shape.push_back(shape[i]);
  if (s.out_shape.empty()) s.out_shape = {1};
  return s;
}

}  // namespace

Tensor sum(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x, axis, "sum");
  const auto& xv = x.values();
  std::vector<float> out(static_cast<std::size_t>(s.outer * s.inner));
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      double acc = 0;
      for (std::int64_t a = 0; a < s.n; ++a)
        acc += xv[static_cast<std::size_t>((o * s.n + a) * s.inner + i)];
      out[static_cast<std::size_t>(o * s.inner + i)] = static_cast<float>(acc);
    }
  if (!x.on_tape()) return Tensor(s.out_shape, std::move(out));
  const int px = x.node();
  return x.tape()->make(s.out_shape, std::move(out),
                        [px, s](const std::vector<float>& g, Tape& t) {
                          auto& gx = t.grad_buffer(px);
                          for (std::int64_t o = 0; o < s.outer; ++o)
                            for (std::int64_t a = 0; a < s.n; ++a)
                              for (std::int64_t i = 0; i < s.inner; ++i)
                                gx[static_cast<std::size_t>((o * s.n + a) * s.inner + i)] +=
                                    g[static_cast<std::size_t>(o * s.inner + i)];
                        });
}

Tensor mean(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x, axis, "mean");
  Tensor total = sum(x, axis);
  return mul(total, Tensor::scalar(1.0f / static_cast<float>(s.n)));
}

Tensor max(const Tensor& x, int axis) {
  const AxisSplit s = split_axis(x, axis, "max");
  const auto& xv = x.values();
  std::vector<float> out(static_cast<std::size_t>(s.outer * s.inner));
  std::vector<std::int64_t> winners(out.size());
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      float best = -std::numeric_limits<float>::infinity();
      std::int64_t best_idx = 0;
      for (std::int64_t a = 0; a < s.n; ++a) {
        const float v = xv[static_cast<std::size_t>((o * s.n + a) * s.inner + i)];
        if (v > best) {
          best = v;
          best_idx = (o * s.n + a) * s.inner + i;
        }
      }
      out[static_cast<std::size_t>(o * s.inner + i)] = best;
      winners[static_cast<std::size_t>(o * s.inner + i)] = best_idx;
    }
  if (!x.on_tape()) return Tensor(s.out_shape, std::move(out));
  const int px = x.node();
  return x.tape()->make(s.out_shape, std::move(out),
                        [px, winners](const std::vector<float>& g, Tape& t) {
                          auto& gx = t.grad_buffer(px);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gx[static_cast<std::size_t>(winners[i])] += g[i];
                        });
}

std::int64_t argmax(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("argmax: empty tensor");
  const auto& xv = x.values();
  std::size_t best = 0;
  for (std::size_t i = 1; i < xv.size(); ++i)
    if (xv[i] > xv[best]) best = i;
  return static_cast<std::int64_t>(best);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             const std::vector<float>& weights) {
  if (logits.shape().size() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be [N,C]");
  const int n = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  if (!weights.empty() && static_cast<int>(weights.size()) != n) {
    throw std::invalid_argument("softmax_cross_entropy: weight count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) throw std::invalid_argument("softmax_cross_entropy: label out of range");
  }
  const auto& lv = logits.values();
  // Row softmax probabilities are saved for the backward pass.
  auto probs = std::make_shared<std::vector<float>>(lv.size());
  double weight_total = 0;
  double loss = 0;
  for (int r = 0; r < n; ++r) {
    const float* row = lv.data() + static_cast<std::size_t>(r) * c;
    float m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - m);
    const double logz = std::log(z);
    for (int j = 0; j < c; ++j)
      (*probs)[static_cast<std::size_t>(r) * c + j] =
          static_cast<float>(std::exp(static_cast<double>(row[j]) - m - logz));
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)];
    loss += w * (-(static_cast<double>(row[labels[static_cast<std::size_t>(r)]]) - m - logz));
    weight_total += w;
  }
  if (weight_total <= 0) throw std::invalid_argument("softmax_cross_entropy: weights sum to zero");
  loss /= weight_total;

  if (!logits.on_tape()) return Tensor({1}, {static_cast<float>(loss)});
  const int pl = logits.node();
  return logits.tape()->make(
      {1}, {static_cast<float>(loss)},
      [pl, probs, labels, weights, n, c, weight_total](const std::vector<float>& g, Tape& t) {
        auto& gl = t.grad_buffer(pl);
        const float gs = g[0];
        for (int r = 0; r < n; ++r) {
          const double w = (weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)]) / weight_total;
          for (int j = 0; j < c; ++j) {
            const float p = (*probs)[static_cast<std::size_t>(r) * c + j];
            const float onehot = (j == labels[static_cast<std::size_t>(r)]) ? 1.0f : 0.0f;
            gl[static_cast<std::size_t>(r) * c + j] += gs * static_cast<float>(w * (p - onehot));
          }
        }
      });
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  constexpr double kEps = 1e-8;
  const auto& uv = u.values();
  const auto& vv = v.values();
  double dot = 0, nu2 = 0, nv2 = 0;
  for (std::size_t i = 0; i < uv.size(); ++i) {
    dot += static_cast<double>(uv[i]) * vv[i];
    nu2 += static_cast<double>(uv[i]) * uv[i];
    nv2 += static_cast<double>(vv[i]) * vv[i];
  }
  const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  const bool degenerate = nu < kEps || nv < kEps;
  const double denom = nu * nv + kEps;
  const double s = degenerate ? 0.0 : dot / denom;

  Tape* tape = joint_tape({&u, &v});
  if (!tape) return Tensor({1}, {static_cast<float>(s)});
  const int pu = u.on_tape() ? u.node() : -1;
  const int pv = v.on_tape() ? v.node() : -1;
  return tape->make({1}, {static_cast<float>(s)},
                    [u, v, pu, pv, dot, nu, nv, denom, degenerate](const std::vector<float>& g, Tape& t) {
                      if (degenerate) return;  // zero-vector guard: constant 0
                      const auto& uv = u.values();
                      const auto& vv = v.values();
                      const double gs = g[0];
                      // d/du [ dot/(|u||v|+eps) ] = v/denom - dot*(|v|/|u|)*u/denom^2
                      if (pu >= 0) {
                        auto& gu = t.grad_buffer(pu);
                        const double a = gs / denom;
                        const double b = gs * dot * (nv / nu) / (denom * denom);
                        for (std::size_t i = 0; i < uv.size(); ++i)
                          gu[i] += static_cast<float>(a * vv[i] - b * uv[i]);
                      }
                      if (pv >= 0) {
                        auto& gv = t.grad_buffer(pv);
                        const double a = gs / denom;
                        const double b = gs * dot * (nu / nv) / (denom * denom);
                        for (std::size_t i = 0; i < vv.size(); ++i)
                          gv[i] += static_cast<float>(a * uv[i] - b * vv[i]);
                      }
                    });
}

Tensor smooth_l1(const Tensor& x, const Tensor& target, float beta) {
  if (beta <= 0) throw std::invalid_argument("smooth_l1: beta must be positive");
  return binary_op(
      "smooth_l1", x, target,
      [beta](float a, float b) {
        const float d = a - b;
        const float ad = std::fabs(d);
        return ad < beta ? 0.5f * d * d / beta : ad - 0.5f * beta;
      },
      [beta](float a, float b) {
        const float d = a - b;
        return std::fabs(d) < beta ? d / beta : (d > 0 ? 1.0f : -1.0f);
      },
      [beta](float a, float b) {
        const float d = a - b;
        return -(std::fabs(d) < beta ? d / beta : (d > 0 ? 1.0f : -1.0f));
      });
}

}  // namespace cpshield::ad
