// SPDX-License-Identifier: Apache-2.0
#include "bline/eval/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "bline/detect/losses.hpp"
#include "bline/ndgrad/gradcheck.hpp"
#include "bline/ndgrad/ops.hpp"
#include "bline/phantom/phantom.hpp"
#include "bline/pretrain/contrastive.hpp"
#include "bline/pretrain/encoder.hpp"

namespace bline {

namespace {

using nd::Tensor;
using nd::Var;

Tensor uniform(nd::Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::vector<double> unit_vector(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = n(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

Tensor unit_rows(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  Tensor t({rows, dim});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto v = unit_vector(dim, rng);
    std::copy(v.begin(), v.end(), t.values().begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  return t;
}

Tensor random_boxes(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 20.0), ext(1.0, 10.0);
  Tensor t({n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    t[4 * i] = x;
    t[4 * i + 1] = y;
    t[4 * i + 2] = x + ext(rng);
    t[4 * i + 3] = y + ext(rng);
  }
  return t;
}

// One attempt: builds fresh inputs from rng and returns the error, or nullopt
// when the draw sits on a kink.
using Attempt = std::function<std::optional<double>(std::mt19937_64&)>;

GradSuiteResult run(const std::string& name, std::size_t points, std::uint64_t seed, const Attempt& attempt) {
  GradSuiteResult r;
  r.name = name;
  std::mt19937_64 rng(seed);
  const std::size_t max_attempts = 50 * points + 50;
  for (std::size_t a = 0; a < max_attempts && r.points < points; ++a) {
    if (auto err = attempt(rng)) {
      ++r.points;
      r.worst = std::max(r.worst, *err);
    } else {
      ++r.rejected;
    }
  }
  if (r.points < points) throw std::runtime_error(name + ": too many draws rejected near kinks");
  return r;
}

std::optional<double> smooth_l1_point(std::mt19937_64& rng) {
  Tensor pred = uniform({4, 4}, -3.0, 3.0, rng);
  Tensor target = uniform({4, 4}, -3.0, 3.0, rng);
  std::vector<Tensor*> wrt{&pred, &target};
  return nd::gradient_relative_error(wrt, [&](nd::Graph& g) {
    return nd::sum(smooth_l1_loss(g.param(pred), g.param(target)));
  });
}

std::optional<double> rpn_cls_point(std::mt19937_64& rng) {
  Tensor probs = uniform({8}, 0.02, 0.98, rng);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> labels(8);
  for (auto& l : labels) l = coin(rng) ? 1.0 : 0.0;
  std::vector<Tensor*> wrt{&probs};
  return nd::gradient_relative_error(wrt, [&](nd::Graph& g) { return bce_loss(g.param(probs), labels); });
}

std::optional<double> info_nce_point(std::mt19937_64& rng) {
  Tensor q = uniform({3, 6}, -1.0, 1.0, rng);
  Tensor k = uniform({3, 6}, -1.0, 1.0, rng);
  Tensor negatives_t({6, 5});
  for (std::size_t j = 0; j < 5; ++j) {
    const auto v = unit_vector(6, rng);
    for (std::size_t d = 0; d < 6; ++d) negatives_t[d * 5 + j] = v[d];
  }
  std::vector<Tensor*> wrt{&q, &k};
  return nd::gradient_relative_error(wrt, [&](nd::Graph& g) {
    return info_nce(nd::l2_normalize(g.param(q)), nd::l2_normalize(g.param(k)), negatives_t, 0.2);
  });
}

std::optional<double> detco_point(std::mt19937_64& rng) {
  EncoderConfig cfg;
  cfg.widths = {2, 3};
  cfg.embed_dim = 4;
  cfg.head_hidden = 5;
  cfg.grid = 2;
  Encoder enc(cfg, rng());
  // Zero biases let a dead hidden layer feed an exact zero into l2_normalize.
  std::uniform_real_distribution<double> bias(-0.5, 0.5);
  for (auto& item : enc.params()) {
    if (item.name.ends_with(".b")) {
      for (auto& v : item.tensor.values()) v = bias(rng);
    }
  }
  const std::size_t n = 2, patches = cfg.grid * cfg.grid;
  // Inputs near the normalisation mean keep first-layer activations small.
  const Tensor views = uniform({n, 1, 8, 8}, 0.2, 0.4, rng);
  const Tensor tiles = uniform({n * patches, 1, 4, 4}, 0.2, 0.4, rng);
  QueueBank queues(cfg.levels(), cfg.embed_dim, 3);
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    for (int i = 0; i < 3; ++i) {
      queues.global[l].enqueue(unit_vector(cfg.embed_dim, rng));
      queues.local[l].enqueue(unit_vector(cfg.embed_dim, rng));
    }
  }
  std::vector<Tensor> keys_g, keys_l;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    keys_g.push_back(unit_rows(n, cfg.embed_dim, rng));
    keys_l.push_back(unit_rows(n, cfg.embed_dim, rng));
  }
  const std::vector<double> weights{0.5, 1.0};
  std::vector<Tensor*> wrt;
  for (auto& item : enc.params()) wrt.push_back(&item.tensor);
  nd::GradCheckOptions options;
  options.kink_margin = 1e-4;
  return nd::gradient_relative_error(
      wrt,
      [&](nd::Graph& g) {
        auto p = enc.bind(g);
        LevelEmbeddings q, k;
        q.global = enc.encode_global(p, g.constant(views));
        q.local = enc.encode_patches(p, g.constant(tiles), n);
        for (std::size_t l = 0; l < cfg.levels(); ++l) {
          k.global.push_back(g.constant(keys_g[l]));
          k.local.push_back(g.constant(keys_l[l]));
        }
        return detco_loss(q, k, queues, weights, 0.2).total;
      },
      options);
}

std::optional<double> eiou_point(std::mt19937_64& rng) {
  Tensor pred = random_boxes(4, rng);
  Tensor gt = random_boxes(4, rng);
  std::vector<Tensor*> wrt{&pred, &gt};
  return nd::gradient_relative_error(wrt, [&](nd::Graph& g) {
    return nd::sum(eiou_loss(g.param(pred), g.param(gt)));
  });
}

}  // namespace

std::vector<GradSuiteResult> run_gradient_suite(std::size_t points, std::uint64_t seed) {
  return {
      run("smooth_l1_loss", points, mix_seed(seed, 1), smooth_l1_point),
      run("rpn_cls_loss", points, mix_seed(seed, 2), rpn_cls_point),
      run("info_nce", points, mix_seed(seed, 3), info_nce_point),
      run("detco_loss", points, mix_seed(seed, 4), detco_point),
      run("eiou_loss", points, mix_seed(seed, 5), eiou_point),
  };
}

}  // namespace bline
