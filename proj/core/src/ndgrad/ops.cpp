// SPDX-License-Identifier: Apache-2.0
#include "bline/ndgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bline::nd {
namespace {

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an empty Var");
  return *a.graph();
}

Graph& graph_of(Var a, Var b) {
  Graph& g = graph_of(a);
  if (b.graph() != &g) throw std::invalid_argument("operands belong to different graphs");
  return g;
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// Elementwise binary op with local partials computed from (a, b, out).
template <typename Fwd, typename Da, typename Db>
Var binary(const char* op, Var a, Var b, Fwd fwd, Da da, Db db) {
  Graph& g = graph_of(a, b);
  require_same_shape(op, a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  const int ia = a.id();
  const int ib = b.id();
  return g.record(op, std::move(out), {ia, ib}, [ia, ib, da, db](Graph& gr, int self) {
    const auto go = gr.grad(self);
    const auto& x = gr.value(ia);
    const auto& y = gr.value(ib);
    if (gr.needs_grad(ia)) {
      auto& gx = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * da(x[i], y[i]);
    }
    if (gr.needs_grad(ib)) {
      auto& gy = gr.grad_buffer(ib);
      for (std::size_t i = 0; i < go.size(); ++i) gy[i] += go[i] * db(x[i], y[i]);
    }
  });
}

// Elementwise unary op; the partial may read the input and the output.
template <typename Fwd, typename D>
Var unary(const char* op, Var a, Fwd fwd, D d) {
  Graph& g = graph_of(a);
  const auto& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  const int ia = a.id();
  return g.record(op, std::move(out), {ia}, [ia, d](Graph& gr, int self) {
    const auto go = gr.grad(self);
    const auto& x = gr.value(ia);
    const auto& y = gr.value(self);
    auto& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * d(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

namespace {
void note_pairwise_kink(Var a, Var b) {
  if (a.shape() != b.shape()) return;
  double nearest = 1e300;
  for (std::size_t i = 0; i < a.size(); ++i) nearest = std::min(nearest, std::abs(a.value()[i] - b.value()[i]));
  a.graph()->note_kink_distance(nearest);
}
}  // namespace

// Ties route the gradient to the first operand.
Var minimum(Var a, Var b) {
  note_pairwise_kink(a, b);
  return binary(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Var maximum(Var a, Var b) {
  note_pairwise_kink(a, b);
  return binary(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; }, [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Var scale(Var a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  Graph& g = graph_of(a);
  double nearest = 1e300;
  for (double v : a.value().values()) nearest = std::min(nearest, std::abs(v));
  g.note_kink_distance(nearest);
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be < hi");
  double nearest = 1e300;
  for (double v : a.value().values()) nearest = std::min({nearest, std::abs(v - lo), std::abs(v - hi)});
  graph_of(a).note_kink_distance(nearest);
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  const auto v = a.value().values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  const int ia = a.id();
  return g.record("sum", Tensor::scalar(s), {ia}, [ia](Graph& gr, int self) {
    const double go = gr.grad(self)[0];
    for (auto& x : gr.grad_buffer(ia)) x += go;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var dot(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (a.value().rank() != 1 || b.value().rank() != 1) throw ShapeError("dot: operands must be rank-1");
  require_same_shape("dot", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  const int ia = a.id();
  const int ib = b.id();
  return g.record("dot", Tensor::scalar(s), {ia, ib}, [ia, ib](Graph& gr, int self) {
    const double go = gr.grad(self)[0];
    const auto& x = gr.value(ia);
    const auto& y = gr.value(ib);
    if (gr.needs_grad(ia)) {
      auto& gx = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go * y[i];
    }
    if (gr.needs_grad(ib)) {
      auto& gy = gr.grad_buffer(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += go * x[i];
    }
  });
}

Var rowwise_dot(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("rowwise_dot", a, b);
  if (a.value().rank() != 2) throw ShapeError("rowwise_dot: operands must be rank-2");
  const std::size_t n = a.dim(0);
  const std::size_t d = a.dim(1);
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor out({n, 1});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += av[r * d + k] * bv[r * d + k];
    out[r] = s;
  }
  const int ia = a.id();
  const int ib = b.id();
  return g.record("rowwise_dot", std::move(out), {ia, ib}, [ia, ib, n, d](Graph& gr, int self) {
    const auto go = gr.grad(self);
    const auto& x = gr.value(ia);
    const auto& y = gr.value(ib);
    if (gr.needs_grad(ia)) {
      auto& gx = gr.grad_buffer(ia);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < d; ++k) gx[r * d + k] += go[r] * y[r * d + k];
    }
    if (gr.needs_grad(ib)) {
      auto& gy = gr.grad_buffer(ib);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < d; ++k) gy[r * d + k] += go[r] * x[r * d + k];
    }
  });
}

namespace {

// c[m,n] += a[m,k] * b[k,n], all row-major.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      for (; p < k; ++p) s0 += arow[p] * brow[p];
      c[i * n + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  gemm_nn(a.value().data().data(), b.value().data().data(), out.values().data(), m, k, n);
  const int ia = a.id();
  const int ib = b.id();
  return g.record("matmul", std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& gr, int self) {
    const double* go = gr.grad(self).data();
    if (gr.needs_grad(ia)) {
      gemm_nt(go, gr.value(ib).data().data(), gr.grad_buffer(ia).data(), m, n, k);
    }
    if (gr.needs_grad(ib)) {
      gemm_tn(gr.value(ia).data().data(), go, gr.grad_buffer(ib).data(), k, m, n);
    }
  });
}

Var linear(Var x, Var w, Var b) {
  Graph& g = graph_of(x, w);
  if (x.value().rank() != 2 || w.value().rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: incompatible shapes " + shape_string(x.shape()) + " and weight " +
                     shape_string(w.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), outd = w.dim(0);
  if (b.valid() && (b.graph() != &g || b.value().rank() != 1 || b.dim(0) != outd)) {
    throw ShapeError("linear: bias must be [" + std::to_string(outd) + "]");
  }
  Tensor out({n, outd});
  if (b.valid()) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t o = 0; o < outd; ++o) out[r * outd + o] = b.value()[o];
  }
  gemm_nt(x.value().data().data(), w.value().data().data(), out.values().data(), n, in, outd);
  std::vector<int> inputs{x.id(), w.id()};
  if (b.valid()) inputs.push_back(b.id());
  const int ix = x.id(), iw = w.id(), ib = b.valid() ? b.id() : -1;
  return g.record("linear", std::move(out), std::move(inputs), [=](Graph& gr, int self) {
    const double* go = gr.grad(self).data();
    if (gr.needs_grad(ix)) gemm_nn(go, gr.value(iw).data().data(), gr.grad_buffer(ix).data(), n, outd, in);
    if (gr.needs_grad(iw)) gemm_tn(go, gr.value(ix).data().data(), gr.grad_buffer(iw).data(), outd, n, in);
    if (ib >= 0 && gr.needs_grad(ib)) {
      auto& gb = gr.grad_buffer(ib);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < outd; ++o) gb[o] += go[r * outd + o];
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, oh, ow;
  std::size_t k() const { return c * kh * kw; }
  std::size_t p() const { return oh * ow; }
};

// col[k, n*p] with k = (ci, ky, kx); zero for padded taps.
void im2col(const ConvGeometry& g, const double* x, double* col) {
  const std::size_t np = g.n * g.p();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((ci * g.kh + ky) * g.kw + kx) * np;
        for (std::size_t b = 0; b < g.n; ++b) {
          const double* plane = x + (b * g.c + ci) * g.h * g.w;
          double* dst = row + b * g.p();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(dst + oy * g.ow, dst + (oy + 1) * g.ow, 0.0);
              continue;
            }
            const double* src = plane + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              dst[oy * g.ow + ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* dx) {
  const std::size_t np = g.n * g.p();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((ci * g.kh + ky) * g.kw + kx) * np;
        for (std::size_t b = 0; b < g.n; ++b) {
          double* plane = dx + (b * g.c + ci) * g.h * g.w;
          const double* src = row + b * g.p();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            double* dst = plane + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[oy * g.ow + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
  Graph& g = graph_of(x, kernel);
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  if (xs.size() != 3 && xs.size() != 4) throw ShapeError("conv2d: input must be [C,H,W] or [N,C,H,W]");
  if (ks.size() != 4) throw ShapeError("conv2d: kernel must be [O,C,kH,kW]");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const bool batched = xs.size() == 4;
  ConvGeometry geo{};
  geo.n = batched ? xs[0] : 1;
  geo.c = xs[batched ? 1 : 0];
  geo.h = xs[batched ? 2 : 1];
  geo.w = xs[batched ? 3 : 2];
  geo.o = ks[0];
  geo.kh = ks[2];
  geo.kw = ks[3];
  geo.stride = stride;
  geo.pad = padding;
  if (ks[1] != geo.c) {
    throw ShapeError("conv2d: input has " + std::to_string(geo.c) + " channels, kernel expects " +
                     std::to_string(ks[1]));
  }
  if (geo.kh > geo.h + 2 * padding || geo.kw > geo.w + 2 * padding) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  if (bias.valid() && (bias.graph() != &g || bias.shape() != Shape{geo.o})) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(geo.o) + "]");
  }
  geo.oh = (geo.h + 2 * padding - geo.kh) / stride + 1;
  geo.ow = (geo.w + 2 * padding - geo.kw) / stride + 1;

  const std::size_t np = geo.n * geo.p();
  std::vector<double> col(geo.k() * np);
  im2col(geo, x.value().data().data(), col.data());
  std::vector<double> tmp(geo.o * np, 0.0);
  gemm_nn(kernel.value().data().data(), col.data(), tmp.data(), geo.o, geo.k(), np);

  Shape out_shape = batched ? Shape{geo.n, geo.o, geo.oh, geo.ow} : Shape{geo.o, geo.oh, geo.ow};
  Tensor out(out_shape);
  auto ov = out.values();
  for (std::size_t b = 0; b < geo.n; ++b) {
    for (std::size_t oc = 0; oc < geo.o; ++oc) {
      const double bv = bias.valid() ? bias.value()[oc] : 0.0;
      const double* src = tmp.data() + oc * np + b * geo.p();
      double* dst = ov.data() + (b * geo.o + oc) * geo.p();
      for (std::size_t q = 0; q < geo.p(); ++q) dst[q] = src[q] + bv;
    }
  }

  std::vector<int> inputs{x.id(), kernel.id()};
  if (bias.valid()) inputs.push_back(bias.id());
  const int ix = x.id(), ik = kernel.id(), ib = bias.valid() ? bias.id() : -1;
  return g.record("conv2d", std::move(out), std::move(inputs), [geo, ix, ik, ib](Graph& gr, int self) {
    const auto go = gr.grad(self);
    const std::size_t np = geo.n * geo.p();
    // Gather the output gradient into [O, N*P] to match the column layout.
    std::vector<double> gtmp(geo.o * np);
    for (std::size_t b = 0; b < geo.n; ++b)
      for (std::size_t oc = 0; oc < geo.o; ++oc)
        std::copy_n(go.data() + (b * geo.o + oc) * geo.p(), geo.p(), gtmp.data() + oc * np + b * geo.p());
    if (ib >= 0 && gr.needs_grad(ib)) {
      auto& gb = gr.grad_buffer(ib);
      for (std::size_t oc = 0; oc < geo.o; ++oc) {
        double s = 0.0;
        for (std::size_t q = 0; q < np; ++q) s += gtmp[oc * np + q];
        gb[oc] += s;
      }
    }
    const bool want_x = gr.needs_grad(ix);
    const bool want_k = gr.needs_grad(ik);
    if (!want_x && !want_k) return;
    if (want_k) {
      std::vector<double> col(geo.k() * np);
      im2col(geo, gr.value(ix).data().data(), col.data());
      gemm_nt(gtmp.data(), col.data(), gr.grad_buffer(ik).data(), geo.o, np, geo.k());
    }
    if (want_x) {
      std::vector<double> dcol(geo.k() * np, 0.0);
      gemm_tn(gr.value(ik).data().data(), gtmp.data(), dcol.data(), geo.k(), geo.o, np);
      col2im(geo, dcol.data(), gr.grad_buffer(ix).data());
    }
  });
}

Var mean_pool(Var x) {
  Graph& g = graph_of(x);
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("mean_pool: input must be [N,C,H,W]");
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor out({n, c});
  const auto& xv = x.value();
  for (std::size_t r = 0; r < n * c; ++r) {
    double s = 0.0;
    for (std::size_t q = 0; q < hw; ++q) s += xv[r * hw + q];
    out[r] = s / static_cast<double>(hw);
  }
  const int ix = x.id();
  return g.record("mean_pool", std::move(out), {ix}, [ix, n, c, hw](Graph& gr, int self) {
    const auto go = gr.grad(self);
    auto& gx = gr.grad_buffer(ix);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t r = 0; r < n * c; ++r)
      for (std::size_t q = 0; q < hw; ++q) gx[r * hw + q] += go[r] * inv;
  });
}

Var upsample_nearest(Var x, std::size_t factor, std::size_t out_h, std::size_t out_w) {
  Graph& g = graph_of(x);
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("upsample_nearest: input must be [N,C,H,W]");
  if (factor == 0) throw std::invalid_argument("upsample_nearest: factor must be positive");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  std::vector<std::size_t> src_index(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i)
    for (std::size_t j = 0; j < out_w; ++j)
      src_index[i * out_w + j] = std::min(i / factor, h - 1) * w + std::min(j / factor, w - 1);
  Tensor out({xs[0], xs[1], out_h, out_w});
  const auto& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t q = 0; q < out_h * out_w; ++q) out[p * out_h * out_w + q] = xv[p * h * w + src_index[q]];
  const int ix = x.id();
  return g.record("upsample_nearest", std::move(out), {ix},
                  [ix, planes, h, w, out_h, out_w, src_index = std::move(src_index)](Graph& gr, int self) {
                    const auto go = gr.grad(self);
                    auto& gx = gr.grad_buffer(ix);
                    for (std::size_t p = 0; p < planes; ++p)
                      for (std::size_t q = 0; q < out_h * out_w; ++q)
                        gx[p * h * w + src_index[q]] += go[p * out_h * out_w + q];
                  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Graph& g = graph_of(parts[0]);
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  std::vector<int> inputs;
  for (const auto& p : parts) {
    if (p.graph() != &g) throw std::invalid_argument("concat: operands belong to different graphs");
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) throw ShapeError("concat: extent mismatch off the concat axis");
    }
    extents.push_back(s[axis]);
    total += s[axis];
    inputs.push_back(p.id());
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    const std::size_t chunk = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data().data() + o * chunk, chunk, out.values().data() + o * total * inner + offset * inner);
    offset += extents[k];
  }
  return g.record("concat", std::move(out), inputs, [inputs, extents, outer, inner, total](Graph& gr, int self) {
    const auto go = gr.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const std::size_t chunk = extents[k] * inner;
      if (gr.needs_grad(inputs[k])) {
        auto& gi = gr.grad_buffer(inputs[k]);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t q = 0; q < chunk; ++q) gi[o * chunk + q] += go[o * total * inner + offset * inner + q];
      }
      offset += extents[k];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = graph_of(a);
  Tensor out(a.value().shape(), a.value().data());
  out.reshape(std::move(shape));
  const int ia = a.id();
  return g.record("reshape", std::move(out), {ia}, [ia](Graph& gr, int self) {
    const auto go = gr.grad(self);
    auto& gi = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Graph& g = graph_of(a);
  const Shape& s = a.shape();
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  const std::size_t row = a.size() / s[0];
  for (auto r : rows) {
    if (r >= s[0]) throw ShapeError("gather_rows: row index out of range");
  }
  Shape out_shape = s;
  out_shape[0] = rows.size();
  Tensor out(out_shape);
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy_n(a.value().data().data() + rows[k] * row, row, out.values().data() + k * row);
  const int ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.record("gather_rows", std::move(out), {ia}, [ia, row, idx = std::move(idx)](Graph& gr, int self) {
    const auto go = gr.grad(self);
    auto& gi = gr.grad_buffer(ia);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t q = 0; q < row; ++q) gi[idx[k] * row + q] += go[k * row + q];
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(a);
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) throw ShapeError("slice: range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t extent = s[axis], len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.value().data().data() + (o * extent + begin) * inner, len * inner,
                out.values().data() + o * len * inner);
  const int ia = a.id();
  return g.record("slice", std::move(out), {ia}, [=](Graph& gr, int self) {
    const auto go = gr.grad(self);
    auto& gi = gr.grad_buffer(ia);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t q = 0; q < len * inner; ++q) gi[(o * extent + begin) * inner + q] += go[o * len * inner + q];
  });
}

Var l2_normalize(Var a, double eps) {
  Graph& g = graph_of(a);
  if (!(eps > 0.0)) throw std::invalid_argument("l2_normalize: epsilon must be positive");
  const Shape& s = a.shape();
  const std::size_t d = s.back();
  const std::size_t rows = a.size() / d;
  Tensor out(s);
  std::vector<double> denom(rows);
  const auto& av = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t k = 0; k < d; ++k) ss += av[r * d + k] * av[r * d + k];
    denom[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = av[r * d + k] / denom[r];
  }
  const int ia = a.id();
  return g.record("l2_normalize", std::move(out), {ia},
                  [ia, d, rows, eps, denom = std::move(denom)](Graph& gr, int self) {
                    const auto go = gr.grad(self);
                    const auto& y = gr.value(self);
                    auto& gi = gr.grad_buffer(ia);
                    for (std::size_t r = 0; r < rows; ++r) {
                      if (denom[r] > eps) {
                        double yg = 0.0;
                        for (std::size_t k = 0; k < d; ++k) yg += y[r * d + k] * go[r * d + k];
                        for (std::size_t k = 0; k < d; ++k)
                          gi[r * d + k] += (go[r * d + k] - y[r * d + k] * yg) / denom[r];
                      } else {
                        for (std::size_t k = 0; k < d; ++k) gi[r * d + k] += go[r * d + k] / eps;
                      }
                    }
                  });
}

Var softmax_xent(Var logits, std::span<const std::size_t> targets) {
  Graph& g = graph_of(logits);
  if (logits.value().rank() != 2) throw ShapeError("softmax_xent: logits must be [N,C]");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) throw ShapeError("softmax_xent: one target per row required");
  const auto& lv = logits.value();
  Tensor out({n});
  std::vector<double> prob(n * c);
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= c) throw ShapeError("softmax_xent: target class out of range");
    const double* row = lv.data().data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      prob[r * c + k] = std::exp(row[k] - mx);
      z += prob[r * c + k];
    }
    for (std::size_t k = 0; k < c; ++k) prob[r * c + k] /= z;
    out[r] = (mx + std::log(z)) - row[targets[r]];
  }
  const int il = logits.id();
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return g.record("softmax_xent", std::move(out), {il},
                  [il, n, c, prob = std::move(prob), tgt = std::move(tgt)](Graph& gr, int self) {
                    const auto go = gr.grad(self);
                    auto& gl = gr.grad_buffer(il);
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t k = 0; k < c; ++k) {
                        const double onehot = (k == tgt[r]) ? 1.0 : 0.0;
                        gl[r * c + k] += go[r] * (prob[r * c + k] - onehot);
                      }
                    }
                  });
}

Var roi_sample(Var features, double stride, double offset, std::span<const SamplePoint> points) {
  Graph& g = graph_of(features);
  const Shape& s = features.shape();
  if (!(s.size() == 3 || (s.size() == 4 && s[0] == 1))) throw ShapeError("roi_sample: features must be [C,H,W]");
  if (points.empty()) throw ShapeError("roi_sample: no sample points");
  if (!(stride > 0.0)) throw std::invalid_argument("roi_sample: stride must be positive");
  const std::size_t c = s[s.size() - 3], h = s[s.size() - 2], w = s[s.size() - 1];

  struct Tap {
    std::size_t index[4];
    double weight[4];
  };
  std::vector<Tap> taps(points.size());
  for (std::size_t p = 0; p < points.size(); ++p) {
    const double u = std::clamp((points[p].x - offset) / stride, 0.0, static_cast<double>(w - 1));
    const double v = std::clamp((points[p].y - offset) / stride, 0.0, static_cast<double>(h - 1));
    const auto x0 = static_cast<std::size_t>(std::floor(u));
    const auto y0 = static_cast<std::size_t>(std::floor(v));
    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
    taps[p] = Tap{{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1},
                  {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy}};
  }
  Tensor out({points.size(), c});
  const auto& fv = features.value();
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* plane = fv.data().data() + ch * h * w;
      double acc = 0.0;
      for (int t = 0; t < 4; ++t) acc += taps[p].weight[t] * plane[taps[p].index[t]];
      out[p * c + ch] = acc;
    }
  }
  const int iff = features.id();
  return g.record("roi_sample", std::move(out), {iff}, [iff, c, h, w, taps = std::move(taps)](Graph& gr, int self) {
    const auto go = gr.grad(self);
    auto& gf = gr.grad_buffer(iff);
    for (std::size_t p = 0; p < taps.size(); ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* plane = gf.data() + ch * h * w;
        for (int t = 0; t < 4; ++t) plane[taps[p].index[t]] += taps[p].weight[t] * go[p * c + ch];
      }
    }
  });
}

}  // namespace bline::nd
