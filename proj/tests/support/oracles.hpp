// SPDX-License-Identifier: Apache-2.0
// Reference implementations used only by tests. Nothing here calls into the
// code under test except for plain data types.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "bline/detect/box.hpp"
#include "bline/detect/nms.hpp"
#include "bline/ndgrad/graph.hpp"
#include "bline/ndgrad/tensor.hpp"

namespace oracle {

inline double box_iou(const bline::Box& a, const bline::Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Term by term from the corner coordinates.
inline double eiou(const bline::Box& p, const bline::Box& g) {
  const double wc = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
  const double hc = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
  const double dx = 0.5 * (p.x1 + p.x2) - 0.5 * (g.x1 + g.x2);
  const double dy = 0.5 * (p.y1 + p.y2) - 0.5 * (g.y1 + g.y2);
  const double dw = (p.x2 - p.x1) - (g.x2 - g.x1);
  const double dh = (p.y2 - p.y1) - (g.y2 - g.y1);
  return 1.0 - box_iou(p, g) + (dx * dx + dy * dy) / (wc * wc + hc * hc) + dw * dw / (wc * wc) + dh * dh / (hc * hc);
}

// Exhaustive greedy NMS: repeatedly scan every remaining candidate for the
// best one (ties to the lower index), keep it, then drop its overlaps.
inline std::vector<std::size_t> nms(const std::vector<bline::Detection>& dets, double nms_iou, double thr) {
  std::vector<bool> alive(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) alive[i] = dets[i].score >= thr;
  std::vector<std::size_t> keep;
  while (true) {
    std::ptrdiff_t best = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (!alive[i]) continue;
      if (best < 0 || dets[i].score > dets[static_cast<std::size_t>(best)].score) best = static_cast<std::ptrdiff_t>(i);
    }
    if (best < 0) break;
    const auto b = static_cast<std::size_t>(best);
    keep.push_back(b);
    alive[b] = false;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && box_iou(dets[i].box, dets[b].box) >= nms_iou) alive[i] = false;
    }
  }
  return keep;
}

// Direct nested-loop cross-correlation of x[N,C,H,W] with k[O,C,kh,kw].
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t h,
                                  std::size_t w, const std::vector<double>& k, std::size_t o, std::size_t kh,
                                  std::size_t kw, const std::vector<double>& bias, std::size_t stride,
                                  std::size_t pad, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long yy = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                acc += x[((b * c + ic) * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)] *
                       k[((oc * c + ic) * kh + u) * kw + v];
              }
          out[((b * o + oc) * oh + i) * ow + j] = acc;
        }
  return out;
}

// -log softmax of the first entry.
inline double xent_first(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp(l - mx);
  return -(logits[0] - mx - std::log(s));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

struct FdResult {
  double rel_error = 0.0;
  double kink = 0.0;
};

// Central differences of a graph-built scalar with respect to `wrt`, compared
// with the analytic gradient. Independent of the library's own checker.
inline FdResult finite_difference(std::vector<bline::nd::Tensor*> wrt,
                                  const std::function<bline::nd::Var(bline::nd::Graph&)>& build,
                                  double step = 1e-5) {
  for (auto* t : wrt) t->set_requires_grad(true);
  FdResult r;
  std::vector<std::vector<double>> analytic;
  {
    bline::nd::Graph g;
    auto loss = build(g);
    r.kink = g.min_abs_kink_distance();
    g.backward(loss);
    for (auto* t : wrt) analytic.emplace_back(t->grad().begin(), t->grad().end());
  }
  double diff = 0.0, scale = 0.0;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto v = wrt[ti]->values();
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double orig = v[k];
      v[k] = orig + step;
      double fp, fm;
      {
        bline::nd::Graph g;
        fp = build(g).item();
      }
      v[k] = orig - step;
      {
        bline::nd::Graph g;
        fm = build(g).item();
      }
      v[k] = orig;
      const double num = (fp - fm) / (2.0 * step);
      diff = std::max(diff, std::abs(num - analytic[ti][k]));
      scale = std::max({scale, std::abs(num), std::abs(analytic[ti][k])});
    }
  }
  r.rel_error = scale > 0.0 ? diff / scale : 0.0;
  return r;
}

inline bline::nd::Tensor random_tensor(bline::nd::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                       double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  bline::nd::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline std::vector<double> unit_vector(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double s = 0.0;
  for (auto& x : v) {
    x = n(rng);
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

inline bline::Box random_box(std::mt19937_64& rng, double extent = 100.0, double max_size = 40.0) {
  std::uniform_real_distribution<double> pos(0.0, extent), size(0.5, max_size);
  const double x = pos(rng), y = pos(rng);
  return {x, y, x + size(rng), y + size(rng)};
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle
