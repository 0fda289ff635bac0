#pragma once

// Reverse-mode autodiff on a flat tape of float64 tensors. Ops cover what
// the denoiser and codec need: dense layers, batched attention matmuls,
// 3x3 convolutions, pooling/upsampling, FiLM, concatenation, gathers and a
// weighted MSE head. Gradients accumulate in fixed loop order, so repeated
// runs are bit-identical.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "bridgegen/tensor.hpp"

namespace bridgegen::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Var leaf(const Tensor& t) { return push(t.shape, t.data, true, {}); }
  Var constant(const Tensor& t) { return push(t.shape, t.data, false, {}); }
  Var constant(Shape shape, std::vector<double> data) {
    std::size_t n = shape_numel(shape);
    if (data.size() != n) throw ValueError("constant: data length does not match shape");
    return push(std::move(shape), std::move(data), false, {});
  }

  std::size_t size() const { return nodes_.size(); }

  const Shape& shape(Var v) const { return at(v).shape; }
  const std::vector<double>& val(Var v) const { return at(v).val; }

  Tensor value(Var v) const {
    const Node& n = at(v);
    return Tensor(n.shape, n.val);
  }

  Tensor grad(Var v) const {
    const Node& n = at(v);
    if (n.grad.empty()) return Tensor::zeros(n.shape);
    return Tensor(n.shape, n.grad);
  }

  void backward(Var loss) {
    Node& top = at(loss);
    if (top.val.size() != 1) throw ValueError("backward: loss must be a scalar");
    if (!top.needs_grad) throw ValueError("backward: loss does not depend on any leaf");
    grad_buf(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.back && !n.grad.empty()) n.back(*this);
    }
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    const auto &va = val(a), &vb = val(b);
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    return push(shape(a), std::move(out), needs(a) || needs(b),
                [a, b](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  if (t.needs(a)) {
                    auto& ga = t.grad_buf(a.id);
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                  }
                  if (t.needs(b)) {
                    auto& gb = t.grad_buf(b.id);
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
                  }
                });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    const auto &va = val(a), &vb = val(b);
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    return push(shape(a), std::move(out), needs(a) || needs(b),
                [a, b](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  if (t.needs(a)) {
                    auto& ga = t.grad_buf(a.id);
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                  }
                  if (t.needs(b)) {
                    auto& gb = t.grad_buf(b.id);
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
                  }
                });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    const auto &va = val(a), &vb = val(b);
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    return push(shape(a), std::move(out), needs(a) || needs(b),
                [a, b](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  const auto &va2 = t.val(a), &vb2 = t.val(b);
                  if (t.needs(a)) {
                    auto& ga = t.grad_buf(a.id);
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * vb2[i];
                  }
                  if (t.needs(b)) {
                    auto& gb = t.grad_buf(b.id);
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * va2[i];
                  }
                });
  }

  // y = k x + c
  Var affine(Var x, double k, double c) {
    const auto& vx = val(x);
    std::vector<double> out(vx.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * vx[i] + c;
    return push(shape(x), std::move(out), needs(x),
                [x, k](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  if (!t.needs(x)) return;
                  auto& gx = t.grad_buf(x.id);
                  for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += k * gy[i];
                });
  }

  Var scale(Var x, double k) { return affine(x, k, 0.0); }

  Var silu(Var x) {
    const auto& vx = val(x);
    std::vector<double> out(vx.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-vx[i]));
      out[i] = vx[i] * s;
    }
    return push(shape(x), std::move(out), needs(x),
                [x](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  if (!t.needs(x)) return;
                  const auto& vx2 = t.val(x);
                  auto& gx = t.grad_buf(x.id);
                  for (std::size_t i = 0; i < gy.size(); ++i) {
                    double s = 1.0 / (1.0 + std::exp(-vx2[i]));
                    gx[i] += gy[i] * s * (1.0 + vx2[i] * (1.0 - s));
                  }
                });
  }

  // x plus b broadcast over leading dims; b.shape must be a suffix of x.shape.
  Var add_bcast(Var x, Var b) {
    const Shape& xs = shape(x);
    const Shape& bs = shape(b);
    if (bs.size() > xs.size() ||
        !std::equal(bs.begin(), bs.end(), xs.end() - static_cast<std::ptrdiff_t>(bs.size())))
      throw ValueError("add_bcast: bias shape must be a suffix of input shape");
    std::size_t d = shape_numel(bs);
    std::size_t r = shape_numel(xs) / d;
    const auto &vx = val(x), &vb = val(b);
    std::vector<double> out(vx.size());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = vx[i * d + j] + vb[j];
    return push(xs, std::move(out), needs(x) || needs(b),
                [x, b, r, d](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  if (t.needs(x)) {
                    auto& gx = t.grad_buf(x.id);
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                  }
                  if (t.needs(b)) {
                    auto& gb = t.grad_buf(b.id);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < d; ++j) gb[j] += gy[i * d + j];
                  }
                });
  }

  // ---- dense ----

  // y = x W^T with W [out, in]; x is [..., in].
  Var linear(Var x, Var w) {
    const Shape& xs = shape(x);
    const Shape& ws = shape(w);
    if (ws.size() != 2) throw ValueError("linear: weight must be rank 2 [out, in]");
    std::size_t in = ws[1], out_dim = ws[0];
    if (xs.back() != in) throw ValueError("linear: input feature dim does not match weight");
    std::size_t r = shape_numel(xs) / in;
    const auto &vx = val(x), &vw = val(w);
    std::vector<double> out(r * out_dim, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      const double* xrow = vx.data() + i * in;
      double* yrow = out.data() + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double* wrow = vw.data() + o * in;
        double acc = 0.0;
        for (std::size_t k = 0; k < in; ++k) acc += xrow[k] * wrow[k];
        yrow[o] = acc;
      }
    }
    Shape ys = xs;
    ys.back() = out_dim;
    return push(std::move(ys), std::move(out), needs(x) || needs(w),
                [x, w, r, in, out_dim](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  const auto &vx2 = t.val(x), &vw2 = t.val(w);
                  if (t.needs(x)) {
                    auto& gx = t.grad_buf(x.id);
                    for (std::size_t i = 0; i < r; ++i) {
                      double* gxrow = gx.data() + i * in;
                      const double* gyrow = gy.data() + i * out_dim;
                      for (std::size_t o = 0; o < out_dim; ++o) {
                        double g = gyrow[o];
                        if (g == 0.0) continue;
                        const double* wrow = vw2.data() + o * in;
                        for (std::size_t k = 0; k < in; ++k) gxrow[k] += g * wrow[k];
                      }
                    }
                  }
                  if (t.needs(w)) {
                    auto& gw = t.grad_buf(w.id);
                    for (std::size_t i = 0; i < r; ++i) {
                      const double* xrow = vx2.data() + i * in;
                      const double* gyrow = gy.data() + i * out_dim;
                      for (std::size_t o = 0; o < out_dim; ++o) {
                        double g = gyrow[o];
                        if (g == 0.0) continue;
                        double* gwrow = gw.data() + o * in;
                        for (std::size_t k = 0; k < in; ++k) gwrow[k] += g * xrow[k];
                      }
                    }
                  }
                });
  }

  // y = x M with M [k, d]; x is [..., k].
  Var matmul(Var x, Var m) {
    const Shape& xs = shape(x);
    const Shape& ms = shape(m);
    if (ms.size() != 2) throw ValueError("matmul: rhs must be rank 2 [k, d]");
    std::size_t k = ms[0], d = ms[1];
    if (xs.back() != k) throw ValueError("matmul: inner dims do not match");
    std::size_t r = shape_numel(xs) / k;
    const auto &vx = val(x), &vm = val(m);
    std::vector<double> out(r * d, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      const double* xrow = vx.data() + i * k;
      double* yrow = out.data() + i * d;
      for (std::size_t kk = 0; kk < k; ++kk) {
        double f = xrow[kk];
        if (f == 0.0) continue;
        const double* mrow = vm.data() + kk * d;
        for (std::size_t j = 0; j < d; ++j) yrow[j] += f * mrow[j];
      }
    }
    Shape ys = xs;
    ys.back() = d;
    return push(std::move(ys), std::move(out), needs(x) || needs(m),
                [x, m, r, k, d](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  const auto &vx2 = t.val(x), &vm2 = t.val(m);
                  if (t.needs(x)) {
                    auto& gx = t.grad_buf(x.id);
                    for (std::size_t i = 0; i < r; ++i) {
                      const double* gyrow = gy.data() + i * d;
                      double* gxrow = gx.data() + i * k;
                      for (std::size_t kk = 0; kk < k; ++kk) {
                        const double* mrow = vm2.data() + kk * d;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < d; ++j) acc += gyrow[j] * mrow[j];
                        gxrow[kk] += acc;
                      }
                    }
                  }
                  if (t.needs(m)) {
                    auto& gm = t.grad_buf(m.id);
                    for (std::size_t i = 0; i < r; ++i) {
                      const double* xrow = vx2.data() + i * k;
                      const double* gyrow = gy.data() + i * d;
                      for (std::size_t kk = 0; kk < k; ++kk) {
                        double f = xrow[kk];
                        if (f == 0.0) continue;
                        double* gmrow = gm.data() + kk * d;
                        for (std::size_t j = 0; j < d; ++j) gmrow[j] += f * gyrow[j];
                      }
                    }
                  }
                });
  }

  // ---- batched attention matmuls ----

  // [B,N,K] x [B,M,K] -> [B,N,M] (rhs transposed).
  Var bmm_nt(Var a, Var b) {
    const Shape& as = shape(a);
    const Shape& bs = shape(b);
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[2])
      throw ValueError("bmm_nt: expects [B,N,K] and [B,M,K]");
    std::size_t bsz = as[0], n = as[1], k = as[2], m = bs[1];
    const auto &va = val(a), &vb = val(b);
    std::vector<double> out(bsz * n * m, 0.0);
    for (std::size_t i = 0; i < bsz; ++i)
      for (std::size_t r = 0; r < n; ++r) {
        const double* arow = va.data() + (i * n + r) * k;
        double* yrow = out.data() + (i * n + r) * m;
        for (std::size_t c = 0; c < m; ++c) {
          const double* brow = vb.data() + (i * m + c) * k;
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += arow[j] * brow[j];
          yrow[c] = acc;
        }
      }
    return push({bsz, n, m}, std::move(out), needs(a) || needs(b),
                [a, b, bsz, n, k, m](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  const auto &va2 = t.val(a), &vb2 = t.val(b);
                  for (std::size_t i = 0; i < bsz; ++i)
                    for (std::size_t r = 0; r < n; ++r) {
                      const double* gyrow = gy.data() + (i * n + r) * m;
                      for (std::size_t c = 0; c < m; ++c) {
                        double g = gyrow[c];
                        if (g == 0.0) continue;
                        if (t.needs(a)) {
                          double* ga = t.grad_buf(a.id).data() + (i * n + r) * k;
                          const double* brow = vb2.data() + (i * m + c) * k;
                          for (std::size_t j = 0; j < k; ++j) ga[j] += g * brow[j];
                        }
                        if (t.needs(b)) {
                          double* gb = t.grad_buf(b.id).data() + (i * m + c) * k;
                          const double* arow = va2.data() + (i * n + r) * k;
                          for (std::size_t j = 0; j < k; ++j) gb[j] += g * arow[j];
                        }
                      }
                    }
                });
  }

  // [B,N,M] x [B,M,K] -> [B,N,K].
  Var bmm_nn(Var a, Var b) {
    const Shape& as = shape(a);
    const Shape& bs = shape(b);
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1])
      throw ValueError("bmm_nn: expects [B,N,M] and [B,M,K]");
    std::size_t bsz = as[0], n = as[1], m = as[2], k = bs[2];
    const auto &va = val(a), &vb = val(b);
    std::vector<double> out(bsz * n * k, 0.0);
    for (std::size_t i = 0; i < bsz; ++i)
      for (std::size_t r = 0; r < n; ++r) {
        const double* arow = va.data() + (i * n + r) * m;
        double* yrow = out.data() + (i * n + r) * k;
        for (std::size_t c = 0; c < m; ++c) {
          double f = arow[c];
          if (f == 0.0) continue;
          const double* brow = vb.data() + (i * m + c) * k;
          for (std::size_t j = 0; j < k; ++j) yrow[j] += f * brow[j];
        }
      }
    return push({bsz, n, k}, std::move(out), needs(a) || needs(b),
                [a, b, bsz, n, m, k](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  const auto &va2 = t.val(a), &vb2 = t.val(b);
                  for (std::size_t i = 0; i < bsz; ++i)
                    for (std::size_t r = 0; r < n; ++r) {
                      const double* gyrow = gy.data() + (i * n + r) * k;
                      for (std::size_t c = 0; c < m; ++c) {
                        if (t.needs(a)) {
                          const double* brow = vb2.data() + (i * m + c) * k;
                          double acc = 0.0;
                          for (std::size_t j = 0; j < k; ++j) acc += gyrow[j] * brow[j];
                          t.grad_buf(a.id)[(i * n + r) * m + c] += acc;
                        }
                        if (t.needs(b)) {
                          double f = va2[(i * n + r) * m + c];
                          if (f == 0.0) continue;
                          double* gb = t.grad_buf(b.id).data() + (i * m + c) * k;
                          for (std::size_t j = 0; j < k; ++j) gb[j] += f * gyrow[j];
                        }
                      }
                    }
                });
  }

  Var softmax_last(Var x) {
    const Shape& xs = shape(x);
    std::size_t d = xs.back();
    std::size_t r = shape_numel(xs) / d;
    const auto& vx = val(x);
    std::vector<double> out(vx.size());
    for (std::size_t i = 0; i < r; ++i) {
      const double* xrow = vx.data() + i * d;
      double* yrow = out.data() + i * d;
      double mx = xrow[0];
      for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xrow[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        yrow[j] = std::exp(xrow[j] - mx);
        sum += yrow[j];
      }
      for (std::size_t j = 0; j < d; ++j) yrow[j] /= sum;
    }
    return push(xs, std::move(out), needs(x),
                [x, r, d](Tape& t) {
                  Var self = t.current_;
                  if (!t.needs(x)) return;
                  const auto& gy = t.at(self).grad;
                  const auto& vy = t.at(self).val;
                  auto& gx = t.grad_buf(x.id);
                  for (std::size_t i = 0; i < r; ++i) {
                    const double* gyrow = gy.data() + i * d;
                    const double* yrow = vy.data() + i * d;
                    double s = 0.0;
                    for (std::size_t j = 0; j < d; ++j) s += gyrow[j] * yrow[j];
                    double* gxrow = gx.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) gxrow[j] += yrow[j] * (gyrow[j] - s);
                  }
                });
  }

  // ---- structure ----

  Var concat(Var a, Var b, std::size_t axis) {
    const Shape& as = shape(a);
    const Shape& bs = shape(b);
    if (as.size() != bs.size() || axis >= as.size())
      throw ValueError("concat: rank mismatch or bad axis");
    for (std::size_t i = 0; i < as.size(); ++i)
      if (i != axis && as[i] != bs[i])
        throw ValueError("concat: shapes must match outside the concat axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= as[i];
    for (std::size_t i = axis + 1; i < as.size(); ++i) inner *= as[i];
    std::size_t wa = as[axis] * inner, wb = bs[axis] * inner;
    const auto &va = val(a), &vb = val(b);
    std::vector<double> out(outer * (wa + wb));
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(va.data() + o * wa, wa, out.data() + o * (wa + wb));
      std::copy_n(vb.data() + o * wb, wb, out.data() + o * (wa + wb) + wa);
    }
    Shape ys = as;
    ys[axis] = as[axis] + bs[axis];
    return push(std::move(ys), std::move(out), needs(a) || needs(b),
                [a, b, outer, wa, wb](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  for (std::size_t o = 0; o < outer; ++o) {
                    const double* row = gy.data() + o * (wa + wb);
                    if (t.needs(a)) {
                      double* ga = t.grad_buf(a.id).data() + o * wa;
                      for (std::size_t i = 0; i < wa; ++i) ga[i] += row[i];
                    }
                    if (t.needs(b)) {
                      double* gb = t.grad_buf(b.id).data() + o * wb;
                      for (std::size_t i = 0; i < wb; ++i) gb[i] += row[wa + i];
                    }
                  }
                });
  }

  Var reshape(Var x, Shape new_shape) {
    if (shape_numel(new_shape) != shape_numel(shape(x)))
      throw ValueError("reshape: element count must be preserved");
    return push(std::move(new_shape), val(x), needs(x),
                [x](Tape& t) {
                  Var self = t.current_;
                  if (!t.needs(x)) return;
                  const auto& gy = t.at(self).grad;
                  auto& gx = t.grad_buf(x.id);
                  for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                });
  }

  // Per-channel affine modulation: x [B,C,H,W], s and h [B,C];
  // y = x * (1 + s) + h broadcast over the spatial plane.
  Var film_chw(Var x, Var s, Var h) {
    const Shape& xs = shape(x);
    if (xs.size() != 4) throw ValueError("film_chw: input must be [B,C,H,W]");
    std::size_t bsz = xs[0], ch = xs[1], plane = xs[2] * xs[3];
    Shape want{bsz, ch};
    if (shape(s) != want || shape(h) != want)
      throw ValueError("film_chw: scale/shift must be [B,C]");
    const auto &vx = val(x), &vs = val(s), &vh = val(h);
    std::vector<double> out(vx.size());
    for (std::size_t bc = 0; bc < bsz * ch; ++bc) {
      double k = 1.0 + vs[bc], c = vh[bc];
      const double* xp = vx.data() + bc * plane;
      double* yp = out.data() + bc * plane;
      for (std::size_t p = 0; p < plane; ++p) yp[p] = k * xp[p] + c;
    }
    return push(xs, std::move(out), needs(x) || needs(s) || needs(h),
                [x, s, h, bsz, ch, plane](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  const auto &vx2 = t.val(x), &vs2 = t.val(s);
                  for (std::size_t bc = 0; bc < bsz * ch; ++bc) {
                    const double* gyp = gy.data() + bc * plane;
                    if (t.needs(x)) {
                      double k = 1.0 + vs2[bc];
                      double* gx = t.grad_buf(x.id).data() + bc * plane;
                      for (std::size_t p = 0; p < plane; ++p) gx[p] += k * gyp[p];
                    }
                    if (t.needs(s)) {
                      const double* xp = vx2.data() + bc * plane;
                      double acc = 0.0;
                      for (std::size_t p = 0; p < plane; ++p) acc += gyp[p] * xp[p];
                      t.grad_buf(s.id)[bc] += acc;
                    }
                    if (t.needs(h)) {
                      double acc = 0.0;
                      for (std::size_t p = 0; p < plane; ++p) acc += gyp[p];
                      t.grad_buf(h.id)[bc] += acc;
                    }
                  }
                });
  }

  // 3x3 convolution, stride 1, zero padding 1. x [B,C,H,W], w [O,C,3,3],
  // bias [O] -> [B,O,H,W].
  Var conv3x3(Var x, Var w, Var bias) {
    const Shape& xs = shape(x);
    const Shape& ws = shape(w);
    if (xs.size() != 4) throw ValueError("conv3x3: input must be [B,C,H,W]");
    if (ws.size() != 4 || ws[2] != 3 || ws[3] != 3)
      throw ValueError("conv3x3: weight must be [O,C,3,3]");
    if (ws[1] != xs[1]) throw ValueError("conv3x3: channel mismatch");
    std::size_t bsz = xs[0], ch = xs[1], hh = xs[2], ww = xs[3], oc = ws[0];
    if (shape(bias) != Shape{oc}) throw ValueError("conv3x3: bias must be [O]");
    const auto &vx = val(x), &vw = val(w), &vb = val(bias);
    std::vector<double> out(bsz * oc * hh * ww);
    for (std::size_t b = 0; b < bsz; ++b)
      for (std::size_t o = 0; o < oc; ++o) {
        double* yplane = out.data() + (b * oc + o) * hh * ww;
        for (std::size_t p = 0; p < hh * ww; ++p) yplane[p] = vb[o];
        for (std::size_t c = 0; c < ch; ++c) {
          const double* xplane = vx.data() + (b * ch + c) * hh * ww;
          const double* wk = vw.data() + (o * ch + c) * 9;
          conv_plane_acc(yplane, xplane, wk, hh, ww);
        }
      }
    return push({bsz, oc, hh, ww}, std::move(out), needs(x) || needs(w) || needs(bias),
                [x, w, bias, bsz, ch, hh, ww, oc](Tape& t) {
                  Var self = t.current_;
                  const auto& gy = t.at(self).grad;
                  const auto &vx2 = t.val(x), &vw2 = t.val(w);
                  for (std::size_t b = 0; b < bsz; ++b)
                    for (std::size_t o = 0; o < oc; ++o) {
                      const double* gplane = gy.data() + (b * oc + o) * hh * ww;
                      if (t.needs(bias)) {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < hh * ww; ++p) acc += gplane[p];
                        t.grad_buf(bias.id)[o] += acc;
                      }
                      for (std::size_t c = 0; c < ch; ++c) {
                        if (t.needs(x)) {
                          double* gxplane = t.grad_buf(x.id).data() + (b * ch + c) * hh * ww;
                          const double* wk = vw2.data() + (o * ch + c) * 9;
                          conv_plane_acc_transposed(gxplane, gplane, wk, hh, ww);
                        }
                        if (t.needs(w)) {
                          const double* xplane = vx2.data() + (b * ch + c) * hh * ww;
                          double* gw = t.grad_buf(w.id).data() + (o * ch + c) * 9;
                          conv_weight_grad(gw, xplane, gplane, hh, ww);
                        }
                      }
                    }
                });
  }

  Var avgpool2(Var x) {
    const Shape& xs = shape(x);
    if (xs.size() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0)
      throw ValueError("avgpool2: input must be [B,C,H,W] with even H, W");
    std::size_t bc = xs[0] * xs[1], hh = xs[2], ww = xs[3];
    std::size_t oh = hh / 2, ow = ww / 2;
    const auto& vx = val(x);
    std::vector<double> out(bc * oh * ow);
    for (std::size_t p = 0; p < bc; ++p) {
      const double* xp = vx.data() + p * hh * ww;
      double* yp = out.data() + p * oh * ow;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xcol = 0; xcol < ow; ++xcol) {
          const double* r0 = xp + (2 * y) * ww + 2 * xcol;
          const double* r1 = r0 + ww;
          yp[y * ow + xcol] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
        }
    }
    return push({xs[0], xs[1], oh, ow}, std::move(out), needs(x),
                [x, bc, hh, ww, oh, ow](Tape& t) {
                  Var self = t.current_;
                  if (!t.needs(x)) return;
                  const auto& gy = t.at(self).grad;
                  auto& gx = t.grad_buf(x.id);
                  for (std::size_t p = 0; p < bc; ++p) {
                    const double* gp = gy.data() + p * oh * ow;
                    double* xp = gx.data() + p * hh * ww;
                    for (std::size_t y = 0; y < oh; ++y)
                      for (std::size_t xcol = 0; xcol < ow; ++xcol) {
                        double g = 0.25 * gp[y * ow + xcol];
                        double* r0 = xp + (2 * y) * ww + 2 * xcol;
                        double* r1 = r0 + ww;
                        r0[0] += g;
                        r0[1] += g;
                        r1[0] += g;
                        r1[1] += g;
                      }
                  }
                });
  }

  Var upsample2(Var x) {
    const Shape& xs = shape(x);
    if (xs.size() != 4) throw ValueError("upsample2: input must be [B,C,H,W]");
    std::size_t bc = xs[0] * xs[1], hh = xs[2], ww = xs[3];
    std::size_t oh = hh * 2, ow = ww * 2;
    const auto& vx = val(x);
    std::vector<double> out(bc * oh * ow);
    for (std::size_t p = 0; p < bc; ++p) {
      const double* xp = vx.data() + p * hh * ww;
      double* yp = out.data() + p * oh * ow;
      for (std::size_t y = 0; y < hh; ++y)
        for (std::size_t xcol = 0; xcol < ww; ++xcol) {
          double v = xp[y * ww + xcol];
          double* r0 = yp + (2 * y) * ow + 2 * xcol;
          double* r1 = r0 + ow;
          r0[0] = v;
          r0[1] = v;
          r1[0] = v;
          r1[1] = v;
        }
    }
    return push({xs[0], xs[1], oh, ow}, std::move(out), needs(x),
                [x, bc, hh, ww, oh, ow](Tape& t) {
                  Var self = t.current_;
                  if (!t.needs(x)) return;
                  const auto& gy = t.at(self).grad;
                  auto& gx = t.grad_buf(x.id);
                  for (std::size_t p = 0; p < bc; ++p) {
                    const double* gp = gy.data() + p * oh * ow;
                    double* xp = gx.data() + p * hh * ww;
                    for (std::size_t y = 0; y < hh; ++y)
                      for (std::size_t xcol = 0; xcol < ww; ++xcol) {
                        const double* r0 = gp + (2 * y) * ow + 2 * xcol;
                        const double* r1 = r0 + ow;
                        xp[y * ww + xcol] += r0[0] + r0[1] + r1[0] + r1[1];
                      }
                  }
                });
  }

  // [B,C,H,W] -> [B,HW,C] token view for attention.
  Var tokens_from_chw(Var x) {
    const Shape& xs = shape(x);
    if (xs.size() != 4) throw ValueError("tokens_from_chw: input must be [B,C,H,W]");
    std::size_t bsz = xs[0], ch = xs[1], plane = xs[2] * xs[3];
    const auto& vx = val(x);
    std::vector<double> out(vx.size());
    for (std::size_t b = 0; b < bsz; ++b)
      for (std::size_t c = 0; c < ch; ++c) {
        const double* xp = vx.data() + (b * ch + c) * plane;
        double* yp = out.data() + b * plane * ch + c;
        for (std::size_t p = 0; p < plane; ++p) yp[p * ch] = xp[p];
      }
    return push({bsz, plane, ch}, std::move(out), needs(x),
                [x, bsz, ch, plane](Tape& t) {
                  Var self = t.current_;
                  if (!t.needs(x)) return;
                  const auto& gy = t.at(self).grad;
                  auto& gx = t.grad_buf(x.id);
                  for (std::size_t b = 0; b < bsz; ++b)
                    for (std::size_t c = 0; c < ch; ++c) {
                      double* xp = gx.data() + (b * ch + c) * plane;
                      const double* yp = gy.data() + b * plane * ch + c;
                      for (std::size_t p = 0; p < plane; ++p) xp[p] += yp[p * ch];
                    }
                });
  }

  // [B,HW,C] -> [B,C,H,W].
  Var chw_from_tokens(Var x, std::size_t h, std::size_t w) {
    const Shape& xs = shape(x);
    if (xs.size() != 3 || xs[1] != h * w)
      throw ValueError("chw_from_tokens: input must be [B,HW,C] matching H, W");
    std::size_t bsz = xs[0], plane = xs[1], ch = xs[2];
    const auto& vx = val(x);
    std::vector<double> out(vx.size());
    for (std::size_t b = 0; b < bsz; ++b)
      for (std::size_t c = 0; c < ch; ++c) {
        const double* xp = vx.data() + b * plane * ch + c;
        double* yp = out.data() + (b * ch + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) yp[p] = xp[p * ch];
      }
    return push({bsz, ch, h, w}, std::move(out), needs(x),
                [x, bsz, ch, plane](Tape& t) {
                  Var self = t.current_;
                  if (!t.needs(x)) return;
                  const auto& gy = t.at(self).grad;
                  auto& gx = t.grad_buf(x.id);
                  for (std::size_t b = 0; b < bsz; ++b)
                    for (std::size_t c = 0; c < ch; ++c) {
                      double* xp = gx.data() + b * plane * ch + c;
                      const double* yp = gy.data() + (b * ch + c) * plane;
                      for (std::size_t p = 0; p < plane; ++p) xp[p * ch] += yp[p];
                    }
                });
  }

  // Row lookup into a table [V,D] for a batch of indices -> [B,D]; the
  // backward pass scatter-adds into the table rows in batch order.
  Var gather_rows(Var table, const std::vector<std::size_t>& idx) {
    const Shape& ts = shape(table);
    if (ts.size() != 2) throw ValueError("gather_rows: table must be rank 2");
    if (idx.empty()) throw ValueError("gather_rows: index list must be non-empty");
    std::size_t v = ts[0], d = ts[1];
    for (std::size_t i : idx)
      if (i >= v) throw ValueError("gather_rows: index out of range");
    const auto& vt = val(table);
    std::vector<double> out(idx.size() * d);
    for (std::size_t b = 0; b < idx.size(); ++b)
      std::copy_n(vt.data() + idx[b] * d, d, out.data() + b * d);
    return push({idx.size(), d}, std::move(out), needs(table),
                [table, idx, d](Tape& t) {
                  Var self = t.current_;
                  if (!t.needs(table)) return;
                  const auto& gy = t.at(self).grad;
                  auto& gt = t.grad_buf(table.id);
                  for (std::size_t b = 0; b < idx.size(); ++b) {
                    double* row = gt.data() + idx[b] * d;
                    const double* g = gy.data() + b * d;
                    for (std::size_t j = 0; j < d; ++j) row[j] += g[j];
                  }
                });
  }

  // Scalar loss: mean over the batch of w_b times the per-sample mean
  // squared difference. pred and target are [B, ...], weights length B.
  Var weighted_mse(Var pred, Var target, const std::vector<double>& weights) {
    check_same(pred, target, "weighted_mse");
    std::size_t bsz = shape(pred)[0];
    if (weights.size() != bsz) throw ValueError("weighted_mse: weights must have length B");
    std::size_t per = shape_numel(shape(pred)) / bsz;
    const auto &vp = val(pred), &vt = val(target);
    double loss = 0.0;
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* p = vp.data() + b * per;
      const double* q = vt.data() + b * per;
      double acc = 0.0;
      for (std::size_t i = 0; i < per; ++i) {
        double diff = p[i] - q[i];
        acc += diff * diff;
      }
      loss += weights[b] * acc / static_cast<double>(per);
    }
    loss /= static_cast<double>(bsz);
    return push({1}, {loss}, needs(pred) || needs(target),
                [pred, target, weights, bsz, per](Tape& t) {
                  Var self = t.current_;
                  double g = t.at(self).grad[0];
                  const auto &vp2 = t.val(pred), &vt2 = t.val(target);
                  for (std::size_t b = 0; b < bsz; ++b) {
                    double k = g * 2.0 * weights[b] /
                               (static_cast<double>(bsz) * static_cast<double>(per));
                    const double* p = vp2.data() + b * per;
                    const double* q = vt2.data() + b * per;
                    if (t.needs(pred)) {
                      double* gp = t.grad_buf(pred.id).data() + b * per;
                      for (std::size_t i = 0; i < per; ++i) gp[i] += k * (p[i] - q[i]);
                    }
                    if (t.needs(target)) {
                      double* gt = t.grad_buf(target.id).data() + b * per;
                      for (std::size_t i = 0; i < per; ++i) gt[i] -= k * (p[i] - q[i]);
                    }
                  }
                });
  }

  bool needs(Var v) const { return at(v).needs_grad; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool needs_grad = false;
    std::function<void(Tape&)> back;
  };

  std::vector<Node> nodes_;
  Var current_{-1};  // node whose backward closure is running

  Node& at(Var v) {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw ValueError("invalid tape variable");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& at(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw ValueError("invalid tape variable");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  std::vector<double>& grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
    return n.grad;
  }

  void check_same(Var a, Var b, const char* what) const {
    if (shape(a) != shape(b))
      throw ValueError(std::string(what) + ": shape mismatch " + shape_to_string(shape(a)) +
                       " vs " + shape_to_string(shape(b)));
  }

  Var push(Shape shape, std::vector<double> val, bool needs_grad,
           std::function<void(Tape&)> back) {
    shape_numel(shape);  // validates positivity
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    if (needs_grad && back) {
      int id = static_cast<int>(nodes_.size());
      n.back = [id, inner = std::move(back)](Tape& t) {
        Var prev = t.current_;
        t.current_ = Var{id};
        inner(t);
        t.current_ = prev;
      };
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // y += conv(x, k) for one 3x3 kernel on one plane, zero padding 1.
  static void conv_plane_acc(double* y, const double* x, const double* k, std::size_t h,
                             std::size_t w) {
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double kv = k[ky * 3 + kx];
        if (kv == 0.0) continue;
        std::size_t y0 = ky == 0 ? 1 : 0;
        std::size_t y1 = ky == 2 ? h - 1 : h;
        std::size_t x0 = kx == 0 ? 1 : 0;
        std::size_t x1 = kx == 2 ? w - 1 : w;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          double* yrow = y + yy * w;
          const double* xrow = x + (yy + ky - 1) * w;
          for (std::size_t xx = x0; xx < x1; ++xx) yrow[xx] += kv * xrow[xx + kx - 1];
        }
      }
  }

  // gx += conv_transpose(gy, k): the adjoint of conv_plane_acc.
  static void conv_plane_acc_transposed(double* gx, const double* gy, const double* k,
                                        std::size_t h, std::size_t w) {
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double kv = k[ky * 3 + kx];
        if (kv == 0.0) continue;
        std::size_t y0 = ky == 0 ? 1 : 0;
        std::size_t y1 = ky == 2 ? h - 1 : h;
        std::size_t x0 = kx == 0 ? 1 : 0;
        std::size_t x1 = kx == 2 ? w - 1 : w;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          const double* grow = gy + yy * w;
          double* xrow = gx + (yy + ky - 1) * w;
          for (std::size_t xx = x0; xx < x1; ++xx) xrow[xx + kx - 1] += kv * grow[xx];
        }
      }
  }

  // gk[3x3] += correlation of x with gy.
  static void conv_weight_grad(double* gk, const double* x, const double* gy, std::size_t h,
                               std::size_t w) {
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        std::size_t y0 = ky == 0 ? 1 : 0;
        std::size_t y1 = ky == 2 ? h - 1 : h;
        std::size_t x0 = kx == 0 ? 1 : 0;
        std::size_t x1 = kx == 2 ? w - 1 : w;
        double acc = 0.0;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          const double* grow = gy + yy * w;
          const double* xrow = x + (yy + ky - 1) * w;
          for (std::size_t xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx + kx - 1];
        }
        gk[ky * 3 + kx] += acc;
      }
  }
};

}  // namespace bridgegen::ad
