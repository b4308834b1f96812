/* Copyright 2026 The flowprobe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flowprobe/autodiff.hpp"
#include "flowprobe/error.hpp"
#include "flowprobe/kernels.hpp"

namespace flowprobe::ad {

using kernels::Transpose;

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw Error("variables live on different tapes");
  return *a.tape;
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError(std::string(op) + " shape mismatch " + shape_str(a.value().shape()) +
                         " vs " + shape_str(b.value().shape()));
  }
}

void require_row(const char* op, Var a, Var row) {
  if (row.value().numel() != a.value().cols()) {
    throw DimensionError(std::string(op) + " row " + shape_str(row.value().shape()) +
                         " does not broadcast over " + shape_str(a.value().shape()));
  }
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename DF>
Var unary(Op op, Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  const int ia = a.id;
  return a.tape->push(op, std::move(y), {ia}, [ia, df](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& xin = t.value(ia);
    const Tensor& yout = t.value(self);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * df(xin[i], yout[i]);
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols();
  if (B.rows() != k) {
    throw DimensionError("matmul shape mismatch " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()));
  }
  const std::size_t n = B.cols();
  Tensor C({m, n});
  kernels::gemm(Transpose::No, Transpose::No, m, n, k, A.data().data(), B.data().data(),
                C.data().data(), false);
  const int ia = a.id, ib = b.id;
  return t.push(Op::MatMul, std::move(C), {ia, ib}, [ia, ib, m, n, k](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) {
      // dA = G · B^T
      kernels::gemm(Transpose::No, Transpose::Yes, m, k, n, g.data().data(),
                    tp.value(ib).data().data(), tp.grad_ref(ia).data().data(), true);
    }
    if (tp.requires_grad(ib)) {
      // dB = A^T · G
      kernels::gemm(Transpose::Yes, Transpose::No, k, n, m, tp.value(ia).data().data(),
                    g.data().data(), tp.grad_ref(ib).data().data(), true);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  if (B.cols() != k) {
    throw DimensionError("matmul_nt shape mismatch " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()) + "^T");
  }
  Tensor C({m, n});
  kernels::gemm(Transpose::No, Transpose::Yes, m, n, k, A.data().data(), B.data().data(),
                C.data().data(), false);
  const int ia = a.id, ib = b.id;
  return t.push(Op::MatMulNT, std::move(C), {ia, ib}, [ia, ib, m, n, k](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) {
      // dA = G · B
      kernels::gemm(Transpose::No, Transpose::No, m, k, n, g.data().data(),
                    tp.value(ib).data().data(), tp.grad_ref(ia).data().data(), true);
    }
    if (tp.requires_grad(ib)) {
      // dB = G^T · A
      kernels::gemm(Transpose::Yes, Transpose::No, n, k, m, g.data().data(),
                    tp.value(ia).data().data(), tp.grad_ref(ib).data().data(), true);
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("add", a, b);
  Tensor y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += B[i];
  const int ia = a.id, ib = b.id;
  return t.push(Op::Add, std::move(y), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    for (int p : {ia, ib}) {
      if (!tp.requires_grad(p)) continue;
      Tensor& gp = tp.grad_ref(p);
      for (std::size_t i = 0; i < g.numel(); ++i) gp[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("sub", a, b);
  Tensor y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= B[i];
  const int ia = a.id, ib = b.id;
  return t.push(Op::Sub, std::move(y), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_ref(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_ref(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= B[i];
  const int ia = a.id, ib = b.id;
  return t.push(Op::Mul, std::move(y), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_ref(ia);
      const Tensor& vb = tp.value(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_ref(ib);
      const Tensor& va = tp.value(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  require_row("add_row", a, row);
  Tensor y = a.value();
  const Tensor& r = row.value();
  const std::size_t n = y.cols();
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] += r[j];
  const int ia = a.id, ir = row.id;
  return t.push(Op::AddRow, std::move(y), {ia, ir}, [ia, ir](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_ref(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ir)) {
      Tensor& gr = tp.grad_ref(ir);
      const std::size_t cols = g.cols();
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) gr[j] += g[i * cols + j];
    }
  });
}

Var mul_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  require_row("mul_row", a, row);
  Tensor y = a.value();
  const Tensor& r = row.value();
  const std::size_t n = y.cols();
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] *= r[j];
  const int ia = a.id, ir = row.id;
  return t.push(Op::MulRow, std::move(y), {ia, ir}, [ia, ir](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    const std::size_t cols = g.cols();
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_ref(ia);
      const Tensor& r = tp.value(ir);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[i * cols + j] * r[j];
    }
    if (tp.requires_grad(ir)) {
      Tensor& gr = tp.grad_ref(ir);
      const Tensor& va = tp.value(ia);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) gr[j] += g[i * cols + j] * va[i * cols + j];
    }
  });
}

Var scale(Var a, double s) {
  Tensor y = a.value();
  for (auto& v : y.data()) v *= s;
  const int ia = a.id;
  return a.tape->push(Op::Scale, std::move(y), {ia}, [ia, s](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& ga = tp.grad_ref(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
  });
}

Var add_scalar(Var a, double s) {
  Tensor y = a.value();
  for (auto& v : y.data()) v += s;
  const int ia = a.id;
  return a.tape->push(Op::AddScalar, std::move(y), {ia}, [ia](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& ga = tp.grad_ref(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

Var tanh(Var a) {
  return unary(
      Op::Tanh, a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  return unary(
      Op::Gelu, a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

Var silu(Var a) {
  return unary(
      Op::Silu, a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var softmax_rows(Var a) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto out = y.row(r);
    double mx = in[0];
    for (double v : in) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= z;
  }
  const int ia = a.id;
  return a.tape->push(Op::SoftmaxRows, std::move(y), {ia}, [ia](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& yv = tp.value(self);
    Tensor& ga = tp.grad_ref(ia);
    const std::size_t cols = g.cols();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * yv[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j)
        ga[r * cols + j] += yv[r * cols + j] * (g[r * cols + j] - dot);
    }
  });
}

namespace {

// Shared layer-norm kernel; gamma/beta ids of -1 mean the identity affine.
Var layer_norm_impl(Var x, int igamma, int ibeta, double eps) {
  if (eps < 0.0) throw DimensionError("layer_norm eps must be >= 0");
  Tape& t = *x.tape;
  const Tensor& in = x.value();
  const std::size_t d = in.cols();
  if (d == 0) throw DimensionError("layer_norm over an empty axis");
  const std::size_t rows = in.rows();
  Tensor xhat(in.shape());
  std::vector<double> inv_std(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = in.row(r);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double s = std::sqrt(var + eps);
    inv_std[r] = s > 0.0 ? 1.0 / s : 0.0;
    for (std::size_t j = 0; j < d; ++j) xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
  }
  Tensor y = xhat;
  if (igamma >= 0) {
    const Tensor& gm = t.value(igamma);
    const Tensor& bt = t.value(ibeta);
    if (gm.numel() != d || bt.numel() != d) {
      throw DimensionError("layer_norm affine parameters do not match input width " +
                           std::to_string(d));
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) y[r * d + j] = gm[j] * xhat[r * d + j] + bt[j];
  }
  std::vector<int> parents{x.id};
  if (igamma >= 0) {
    parents.push_back(igamma);
    parents.push_back(ibeta);
  }
  const int ix = x.id;
  return t.push(Op::LayerNorm, std::move(y), std::move(parents),
                [ix, igamma, ibeta, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
                 rows](Tape& tp, int self) {
                  const Tensor& g = tp.grad_ref(self);
                  std::vector<double> gx(d);
                  if (igamma >= 0 && tp.requires_grad(igamma)) {
                    Tensor& gg = tp.grad_ref(igamma);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                  }
                  if (igamma >= 0 && tp.requires_grad(ibeta)) {
                    Tensor& gb = tp.grad_ref(ibeta);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                  }
                  if (!tp.requires_grad(ix)) return;
                  Tensor& ga = tp.grad_ref(ix);
                  const Tensor* gm = igamma >= 0 ? &tp.value(igamma) : nullptr;
                  for (std::size_t r = 0; r < rows; ++r) {
                    if (inv_std[r] == 0.0) continue;
                    double mg = 0.0, mgx = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      gx[j] = g[r * d + j] * (gm ? (*gm)[j] : 1.0);
                      mg += gx[j];
                      mgx += gx[j] * xhat[r * d + j];
                    }
                    mg /= static_cast<double>(d);
                    mgx /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j)
                      ga[r * d + j] += inv_std[r] * (gx[j] - mg - xhat[r * d + j] * mgx);
                  }
                });
}

}  // namespace

Var layer_norm(Var x, double eps) { return layer_norm_impl(x, -1, -1, eps); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  same_tape(x, gamma);
  same_tape(x, beta);
  return layer_norm_impl(x, gamma.id, beta.id, eps);
}

Var mean_rows(Var x) {
  const Tensor& in = x.value();
  const std::size_t rows = in.rows(), d = in.cols();
  if (rows == 0 || in.numel() == 0) throw DimensionError("mean_rows of an empty sequence");
  Tensor y({1, d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) y[j] += in[r * d + j];
  for (std::size_t j = 0; j < d; ++j) y[j] /= static_cast<double>(rows);
  const int ix = x.id;
  return x.tape->push(Op::MeanRows, std::move(y), {ix}, [ix, rows, d](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gx = tp.grad_ref(ix);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[j] * inv;
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& in = x.value();
  const std::size_t n = in.cols(), rows = in.rows();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_str(in.shape()));
  }
  const std::size_t w = end - begin;
  Tensor y({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) y[r * w + j] = in[r * n + begin + j];
  const int ix = x.id;
  return x.tape->push(Op::SliceCols, std::move(y), {ix}, [ix, begin, w, n, rows](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gx = tp.grad_ref(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gx[r * n + begin + j] += g[r * w + j];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().value().rows();
  std::size_t total = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    if (p.value().rows() != rows) {
      throw DimensionError("concat_cols row mismatch " + shape_str(parts.front().value().shape()) +
                           " vs " + shape_str(p.value().shape()));
    }
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor y({rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) y[r * total + off + j] = v[r * widths[k] + j];
    off += widths[k];
  }
  return t.push(Op::ConcatCols, std::move(y), ids, [ids, widths, rows, total](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Tensor& gp = tp.grad_ref(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) gp[r * widths[k] + j] += g[r * total + o + j];
      }
      o += widths[k];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const int ix = x.id;
  return x.tape->push(Op::Sum, Tensor::scalar(s), {ix}, [ix](Tape& tp, int self) {
    const double g = tp.grad_ref(self)[0];
    for (auto& v : tp.grad_ref(ix).data()) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var square(Var a) {
  return unary(
      Op::Square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var cosine(Var a, Var b, double eps) {
  Tape& t = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.numel() != B.numel() || A.numel() == 0) {
    throw DimensionError("cosine shape mismatch " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < A.numel(); ++i) {
    dot += A[i] * B[i];
    na += A[i] * A[i];
    nb += B[i] * B[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const double den = (na + eps) * (nb + eps);
  const double c = den > 0.0 ? dot / den : 0.0;
  const int ia = a.id, ib = b.id;
  return t.push(Op::Cosine, Tensor::scalar(std::clamp(c, -1.0, 1.0)), {ia, ib},
                [ia, ib, na, nb, den, c, eps](Tape& tp, int self) {
                  if (den == 0.0) return;
                  const double g = tp.grad_ref(self)[0];
                  const Tensor& va = tp.value(ia);
                  const Tensor& vb = tp.value(ib);
                  // d/da = b/den - c * a / (|a| (|a|+eps)); the second term vanishes at a = 0.
                  if (tp.requires_grad(ia)) {
                    Tensor& ga = tp.grad_ref(ia);
                    const double ka = na > 0.0 ? c / (na * (na + eps)) : 0.0;
                    for (std::size_t i = 0; i < va.numel(); ++i) ga[i] += g * (vb[i] / den - ka * va[i]);
                  }
                  if (tp.requires_grad(ib)) {
                    Tensor& gb = tp.grad_ref(ib);
                    const double kb = nb > 0.0 ? c / (nb * (nb + eps)) : 0.0;
                    for (std::size_t i = 0; i < vb.numel(); ++i) gb[i] += g * (va[i] / den - kb * vb[i]);
                  }
                });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  const Tensor& tab = table.value();
  const std::size_t d = tab.cols(), n = tab.rows();
  Tensor y({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= n) {
      throw DimensionError("token id " + std::to_string(ids[r]) + " outside vocabulary of size " +
                           std::to_string(n));
    }
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = tab[static_cast<std::size_t>(ids[r]) * d + j];
  }
  const int it = table.id;
  return table.tape->push(Op::GatherRows, std::move(y), {it}, [it, ids, d](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gt = tp.grad_ref(it);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(ids[r]) * d + j] += g[r * d + j];
  });
}

}  // namespace flowprobe::ad
